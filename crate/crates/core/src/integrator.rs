//! Adaptive embedded Runge-Kutta integration of the flows.
//!
//! Two explicit pairs are provided, both first-same-as-last and both advancing
//! with the higher-order solution:
//!
//! * Dormand-Prince 5(4), seven stages
//! * Bogacki-Shampine 3(2), four stages
//!
//! The error of a step is the RMS norm of the embedded difference weighted
//! by `abs_tol + rel_tol * max(|z_old|, |z_new|)`. A step is accepted when
//! that norm is at most one.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{check_stacked, FlowField, FlowKind, KktProbe};
use crate::error::{Error, Result};
use crate::types::{positive_part_norm, GainConfig, Method, Problem, State, Trace, TraceSample};

struct Tableau {
    c: &'static [f64],
    /// Row `i` holds the coefficients of stage `i` on stages `0..i`.
    a: &'static [&'static [f64]],
    b: &'static [f64],
    /// `b - b_hat`.
    e: &'static [f64],
    /// Exponent denominator of the step-size controller.
    order: f64,
}

const DOPRI5: Tableau = Tableau {
    c: &[0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0],
    a: &[
        &[],
        &[1.0 / 5.0],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
        &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
        &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
        &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ],
    b: &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0],
    e: &[
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ],
    order: 5.0,
};

const BS23: Tableau = Tableau {
    c: &[0.0, 0.5, 0.75, 1.0],
    a: &[&[], &[0.5], &[0.0, 0.75], &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0]],
    b: &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0, 0.0],
    e: &[-5.0 / 72.0, 1.0 / 12.0, 1.0 / 9.0, -1.0 / 8.0],
    order: 3.0,
};

fn tableau(method: Method) -> &'static Tableau {
    match method {
        Method::Rk45 => &DOPRI5,
        Method::Rk23 => &BS23,
    }
}

/// Integrator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    pub safety_factor: f64,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self {
            method: Method::Rk45,
            rel_tol: 1e-3,
            abs_tol: 1e-6,
            h_init: None,
            h_max: None,
            safety_factor: 0.9,
        }
    }
}

impl IntegratorSpec {
    pub fn from_gains(gains: &GainConfig) -> Self {
        Self {
            method: gains.integrator,
            rel_tol: gains.rel_tol,
            abs_tol: gains.abs_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("rel_tol", "must be positive"));
        }
        if !(self.abs_tol > 0.0) {
            return Err(Error::invalid("abs_tol", "must be positive"));
        }
        if !(self.safety_factor > 0.0 && self.safety_factor < 1.0) {
            return Err(Error::invalid("safety_factor", "must lie in (0, 1)"));
        }
        for (name, v) in [("h_init", self.h_init), ("h_max", self.h_max)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::invalid(name, "must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Result of a single embedded step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub proposed: Vec<f64>,
    pub error: f64,
    pub accepted: bool,
    /// Suggested size of the next step.
    pub h_next: f64,
}

/// Stage storage for one embedded pair.
struct Stepper {
    tab: &'static Tableau,
    k: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    out: Vec<f64>,
    /// `k[0]` holds the field at the current point.
    k0_valid: bool,
    evals: usize,
}

impl Stepper {
    fn new(method: Method, dim: usize) -> Self {
        let tab = tableau(method);
        Self {
            tab,
            k: vec![vec![0.0; dim]; tab.c.len()],
            tmp: vec![0.0; dim],
            out: vec![0.0; dim],
            k0_valid: false,
            evals: 0,
        }
    }

    fn prime<F: FnMut(f64, &[f64], &mut [f64])>(&mut self, f: &mut F, t: f64, z: &[f64]) {
        if !self.k0_valid {
            f(t, z, &mut self.k[0]);
            self.evals += 1;
            self.k0_valid = true;
        }
    }

    /// Computes the higher-order solution into `self.out` and returns the
    /// weighted RMS error norm.
    fn attempt<F: FnMut(f64, &[f64], &mut [f64])>(
        &mut self,
        f: &mut F,
        t: f64,
        z: &[f64],
        h: f64,
        spec: &IntegratorSpec,
    ) -> f64 {
        self.prime(f, t, z);
        let stages = self.tab.c.len();
        for s in 1..stages {
            let row = self.tab.a[s];
            for i in 0..z.len() {
                let mut acc = 0.0;
                for (j, &a) in row.iter().enumerate() {
                    acc += a * self.k[j][i];
                }
                self.tmp[i] = z[i] + h * acc;
            }
            f(t + self.tab.c[s] * h, &self.tmp, &mut self.k[s]);
            self.evals += 1;
        }
        // Both pairs have b equal to the last row of a, so the final stage
        // input is already the propagated solution.
        self.out.copy_from_slice(&self.tmp);
        debug_assert!(self.tab.b[stages - 1] == 0.0);

        let mut sum = 0.0;
        for i in 0..z.len() {
            let mut err = 0.0;
            for (j, &e) in self.tab.e.iter().enumerate() {
                err += e * self.k[j][i];
            }
            let scale = spec.abs_tol + spec.rel_tol * z[i].abs().max(self.out[i].abs());
            let r = h * err / scale;
            sum += r * r;
        }
        let norm = (sum / z.len().max(1) as f64).sqrt();
        if self.out.iter().all(|v| v.is_finite()) {
            norm
        } else {
            f64::INFINITY
        }
    }

    /// Accepts the last attempt: FSAL stage becomes `k[0]`.
    fn commit(&mut self, z: &mut [f64]) {
        z.copy_from_slice(&self.out);
        let last = self.k.len() - 1;
        self.k.swap(0, last);
        self.k0_valid = true;
    }
}

fn next_step_factor(err: f64, spec: &IntegratorSpec, order: f64) -> f64 {
    if err == 0.0 {
        5.0
    } else if !err.is_finite() {
        0.1
    } else {
        (spec.safety_factor * err.powf(-1.0 / order)).clamp(0.1, 5.0)
    }
}

/// One embedded Runge-Kutta step of size `h` from `(t, z)`.
pub fn step<F>(mut field: F, t: f64, z: &[f64], h: f64, spec: &IntegratorSpec) -> Result<StepOutcome>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    spec.validate()?;
    if !(h > 0.0) {
        return Err(Error::invalid("h", "step size must be positive"));
    }
    let mut st = Stepper::new(spec.method, z.len());
    st.prime(&mut field, t, z);
    if st.k[0].iter().any(|v| !v.is_finite()) {
        return Err(non_finite(t, z));
    }
    let err = st.attempt(&mut field, t, z, h, spec);
    if !err.is_finite() {
        return Err(non_finite(t, z));
    }
    let accepted = err <= 1.0;
    let mut factor = next_step_factor(err, spec, st.tab.order);
    if !accepted {
        factor = factor.min(1.0);
    }
    Ok(StepOutcome {
        proposed: st.out.clone(),
        error: err,
        accepted,
        h_next: h * factor,
    })
}

fn non_finite(t: f64, z: &[f64]) -> Error {
    Error::IntegrationFailure {
        t,
        reason: "non-finite vector field".into(),
        state: z.to_vec(),
    }
}

fn weighted_rms(v: &[f64], z: &[f64], spec: &IntegratorSpec) -> f64 {
    let s: f64 = v
        .iter()
        .zip(z)
        .map(|(a, b)| {
            let r = a / (spec.abs_tol + spec.rel_tol * b.abs());
            r * r
        })
        .sum();
    (s / v.len().max(1) as f64).sqrt()
}

/// Starting step from the size of the field and a trial Euler step.
fn initial_step<F: FnMut(f64, &[f64], &mut [f64])>(
    f: &mut F,
    t0: f64,
    z0: &[f64],
    f0: &[f64],
    spec: &IntegratorSpec,
    order: f64,
) -> f64 {
    let d0 = weighted_rms(z0, z0, spec);
    let d1 = weighted_rms(f0, z0, spec);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let z1: Vec<f64> = z0.iter().zip(f0).map(|(z, d)| z + h0 * d).collect();
    let mut f1 = vec![0.0; z0.len()];
    f(t0 + h0, &z1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = weighted_rms(&diff, z0, spec) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / order)
    };
    (100.0 * h0).min(h1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    HorizonReached,
    KktToleranceMet,
    StepUnderflow,
}

/// Outcome of [`integrate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    pub t: f64,
    pub z: Vec<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub evaluations: usize,
    pub stop_reason: StopReason,
}

/// Adaptive integration of `z' = field(t, z)` from `t0` to `t_final`.
///
/// `observer` is called after every accepted step with
/// `(step_index, t, z)`; returning `true` stops the integration with
/// [`StopReason::KktToleranceMet`].
pub fn integrate<F, O>(
    mut field: F,
    t0: f64,
    z0: &[f64],
    t_final: f64,
    spec: &IntegratorSpec,
    mut observer: O,
) -> Result<Integration>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(usize, f64, &[f64]) -> bool,
{
    spec.validate()?;
    if !(t_final > t0) {
        return Err(Error::invalid("t_final", "must exceed the initial time"));
    }
    let span = t_final - t0;
    let h_min = 1e-14 * t_final.abs().max(span);
    let h_max = spec.h_max.unwrap_or(span);

    let mut st = Stepper::new(spec.method, z0.len());
    let mut z = z0.to_vec();
    let mut t = t0;
    st.prime(&mut field, t, &z);
    if st.k[0].iter().any(|v| !v.is_finite()) {
        return Err(non_finite(t, &z));
    }
    let mut h = match spec.h_init {
        Some(h) => h,
        None => {
            let f0 = st.k[0].clone();
            st.evals += 1;
            initial_step(&mut field, t, &z, &f0, spec, st.tab.order)
        }
    }
    .min(h_max);

    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut reason = StopReason::HorizonReached;
    let mut last_rejected = false;

    while t < t_final {
        if h < h_min {
            reason = StopReason::StepUnderflow;
            break;
        }
        let remaining = t_final - t;
        let last = h >= remaining;
        let h_try = if last { remaining } else { h };
        let err = st.attempt(&mut field, t, &z, h_try, spec);
        let mut factor = next_step_factor(err, spec, st.tab.order);
        if err <= 1.0 {
            st.commit(&mut z);
            if st.k[0].iter().any(|v| !v.is_finite()) {
                return Err(non_finite(t + h_try, &z));
            }
            t = if last { t_final } else { t + h_try };
            accepted += 1;
            if last_rejected {
                factor = factor.min(1.0);
            }
            last_rejected = false;
            h = (h_try * factor).min(h_max);
            if observer(accepted, t, &z) {
                reason = StopReason::KktToleranceMet;
                break;
            }
        } else {
            rejected += 1;
            last_rejected = true;
            h = h_try * factor.min(1.0);
        }
    }

    Ok(Integration {
        t,
        z,
        accepted_steps: accepted,
        rejected_steps: rejected,
        evaluations: st.evals,
        stop_reason: reason,
    })
}

/// Fixed-step integration with the higher-order member of the pair. Used to
/// measure convergence order.
pub fn integrate_fixed<F>(mut field: F, t0: f64, z0: &[f64], t_final: f64, h: f64, method: Method) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(h > 0.0) || !(t_final > t0) {
        return Err(Error::invalid("h", "need h > 0 and t_final > t0"));
    }
    let spec = IntegratorSpec {
        method,
        ..IntegratorSpec::default()
    };
    let mut st = Stepper::new(method, z0.len());
    let mut z = z0.to_vec();
    let mut t = t0;
    let steps = ((t_final - t0) / h).round().max(1.0) as usize;
    let h = (t_final - t0) / steps as f64;
    for _ in 0..steps {
        st.attempt(&mut field, t, &z, h, &spec);
        st.commit(&mut z);
        t += h;
    }
    Ok(z)
}

/// Recording options for [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Overrides for step-size control; method and tolerances come from the
    /// gains.
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    pub safety_factor: f64,
    /// Known optimum used for `dist_to_opt`.
    pub reference: Option<DVector<f64>>,
    /// Store `x` and `lambda` in each sample.
    pub snapshots: bool,
    /// Record every `stride`-th accepted step (the final step is always
    /// recorded).
    pub stride: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            h_init: None,
            h_max: None,
            safety_factor: 0.9,
            reference: None,
            snapshots: false,
            stride: 1,
        }
    }
}

impl RunOptions {
    pub fn with_reference(reference: DVector<f64>) -> Self {
        Self {
            reference: Some(reference),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub final_state: State,
    pub trace: Trace,
    pub stop_reason: StopReason,
    pub evaluations: usize,
}

/// Integrates the selected flow from `(x0, lambda0)` over `[0, t_final]`.
pub fn run(
    problem: &Problem,
    gains: &GainConfig,
    flow: FlowKind,
    x0: &DVector<f64>,
    lambda0: &DVector<f64>,
    opts: &RunOptions,
) -> Result<RunResult> {
    gains.validate()?;
    problem.check_pair(x0, lambda0)?;
    if let Some(r) = &opts.reference {
        problem.check_primal(r)?;
    }
    let spec = IntegratorSpec {
        h_init: opts.h_init,
        h_max: opts.h_max,
        safety_factor: opts.safety_factor,
        ..IntegratorSpec::from_gains(gains)
    };
    let stride = opts.stride.max(1);
    let n = problem.n();
    let z0 = State::new(x0.clone(), lambda0.clone()).stacked();
    check_stacked(problem, z0.as_slice())?;

    let started = Instant::now();
    let mut field = FlowField::new(problem, gains, flow)?;
    let mut probe = KktProbe::new(problem);
    let mut samples = Vec::new();
    let mut h_buf = DVector::zeros(problem.m());

    let mut record = |step: usize, t: f64, z: &[f64], samples: &mut Vec<TraceSample>| -> f64 {
        let kkt = probe.eval(z);
        problem.constraints().residual_into(probe.x(), &mut h_buf);
        let dist_to_opt = opts.reference.as_ref().map(|r| (probe.x() - r).norm());
        samples.push(TraceSample {
            t,
            step,
            x: opts.snapshots.then(|| z[..n].to_vec()),
            lambda: opts.snapshots.then(|| z[n..].to_vec()),
            constraint_violation: positive_part_norm(&h_buf),
            kkt_residual: kkt.total,
            dist_to_opt,
        });
        kkt.total
    };

    let initial_kkt = record(0, 0.0, z0.as_slice(), &mut samples);
    let stop_tol = gains.kkt_stop_tol;
    if stop_tol.is_some_and(|tol| initial_kkt <= tol) {
        let trace = Trace {
            samples,
            accepted_steps: 0,
            rejected_steps: 0,
            wall_time: started.elapsed().as_secs_f64(),
        };
        return Ok(RunResult {
            final_state: State::new(x0.clone(), lambda0.clone()),
            trace,
            stop_reason: StopReason::KktToleranceMet,
            evaluations: 0,
        });
    }

    let t_final = gains.t_final;
    let out = integrate(
        |_, z, dz| field.eval(z, dz),
        0.0,
        z0.as_slice(),
        t_final,
        &spec,
        |step, t, z| {
            let at_end = t >= t_final;
            if step % stride == 0 || at_end {
                let kkt = record(step, t, z, &mut samples);
                stop_tol.is_some_and(|tol| kkt <= tol)
            } else if let Some(tol) = stop_tol {
                let kkt = record(step, t, z, &mut samples);
                if kkt <= tol {
                    true
                } else {
                    samples.pop();
                    false
                }
            } else {
                false
            }
        },
    )?;

    // Underflow ends between strides; keep the final point in the trace.
    if samples.last().map(|s| s.step) != Some(out.accepted_steps) {
        record(out.accepted_steps, out.t, &out.z, &mut samples);
    }

    let trace = Trace {
        samples,
        accepted_steps: out.accepted_steps,
        rejected_steps: out.rejected_steps,
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok(RunResult {
        final_state: State::from_stacked(&DVector::from_vec(out.z), n, out.t),
        trace,
        stop_reason: out.stop_reason,
        evaluations: out.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, z: &[f64], dz: &mut [f64]) {
        for (d, v) in dz.iter_mut().zip(z) {
            *d = -v;
        }
    }

    #[test]
    fn zero_field_step_is_exact() {
        let spec = IntegratorSpec::default();
        let z = [1.5, -2.0];
        let out = step(|_, _, dz: &mut [f64]| dz.fill(0.0), 0.0, &z, 0.3, &spec).unwrap();
        assert_eq!(out.proposed, z.to_vec());
        assert_eq!(out.error, 0.0);
        assert!(out.accepted);
    }

    #[test]
    fn step_rejects_nonpositive_h() {
        assert!(step(decay, 0.0, &[1.0], 0.0, &IntegratorSpec::default()).is_err());
    }

    #[test]
    fn step_reports_non_finite_field() {
        let r = step(|_, _, dz: &mut [f64]| dz[0] = f64::NAN, 0.0, &[1.0], 0.1, &IntegratorSpec::default());
        assert!(matches!(r, Err(Error::IntegrationFailure { .. })));
    }

    #[test]
    fn large_step_is_rejected() {
        let spec = IntegratorSpec {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..IntegratorSpec::default()
        };
        let out = step(decay, 0.0, &[1.0], 1.0, &spec).unwrap();
        assert!(!out.accepted);
        assert!(out.h_next < 1.0);
    }

    #[test]
    fn scalar_exponential_both_methods() {
        for method in [Method::Rk45, Method::Rk23] {
            let spec = IntegratorSpec {
                method,
                rel_tol: 1e-8,
                abs_tol: 1e-10,
                ..IntegratorSpec::default()
            };
            let out = integrate(decay, 0.0, &[1.0], 1.0, &spec, |_, _, _| false).unwrap();
            assert_eq!(out.stop_reason, StopReason::HorizonReached);
            assert_eq!(out.t, 1.0);
            assert!((out.z[0] - (-1.0f64).exp()).abs() < 1e-7, "{method}: {}", out.z[0]);
        }
    }

    #[test]
    fn diagonal_linear_system() {
        let spec = IntegratorSpec {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            ..IntegratorSpec::default()
        };
        let out = integrate(
            |_, z: &[f64], dz: &mut [f64]| {
                dz[0] = -z[0];
                dz[1] = -2.0 * z[1];
            },
            0.0,
            &[1.0, 1.0],
            1.0,
            &spec,
            |_, _, _| false,
        )
        .unwrap();
        assert!((out.z[0] - (-1.0f64).exp()).abs() < 1e-7);
        assert!((out.z[1] - (-2.0f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn observer_can_stop() {
        let out = integrate(decay, 0.0, &[1.0], 10.0, &IntegratorSpec::default(), |_, _, z| z[0] < 0.5).unwrap();
        assert_eq!(out.stop_reason, StopReason::KktToleranceMet);
        assert!(out.t < 10.0);
    }

    #[test]
    fn underflow_is_reported() {
        // finite-time blow-up of z' = z^2 at t = 1
        let out = integrate(
            |_, z: &[f64], dz: &mut [f64]| dz[0] = z[0] * z[0],
            0.0,
            &[1.0],
            2.0,
            &IntegratorSpec::default(),
            |_, _, _| false,
        );
        match out {
            Ok(o) => assert_eq!(o.stop_reason, StopReason::StepUnderflow),
            Err(e) => assert!(matches!(e, Error::IntegrationFailure { .. })),
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = IntegratorSpec {
            safety_factor: 1.2,
            ..IntegratorSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
