//! Vector fields of the two flows and KKT diagnostics.
//!
//! Both flows share the primal equation `x' = -grad f(x) - grad_x g(x, lambda)`.
//! They differ in the multiplier equation:
//!
//! * primal-dual gradient (PDGD): `lambda' = eta * grad_lambda g`
//! * proportional-integral (PI): `lambda' = k_i * grad_lambda g + k_p * C x'`

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::lagrangian::{clamped_multipliers_into, grad_lambda_scalar};
use crate::types::{positive_part_norm, GainConfig, Problem, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Pdgd,
    Pi,
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            FlowKind::Pdgd => "pdgd",
            FlowKind::Pi => "pi",
        })
    }
}

/// Decomposed first-order optimality residual. `total` is the largest part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    /// `|| grad f(x) + C^T lambda ||_2`
    pub stationarity: f64,
    /// `sum_j |lambda_j h_j(x)|`
    pub complementarity: f64,
    /// `|| max(h(x), 0) ||_2`
    pub primal_infeasibility: f64,
    /// `|| max(-lambda, 0) ||_2`
    pub dual_infeasibility: f64,
    pub total: f64,
}

/// Right-hand side of a flow with preallocated scratch space, evaluated on
/// the stacked state `z = (x, lambda)`.
#[derive(Debug, Clone)]
pub struct FlowField<'a> {
    problem: &'a Problem,
    kind: FlowKind,
    /// Multiplier gain applied to `grad_lambda g` (`eta` or `k_i`).
    dual_gain: f64,
    k_p: f64,
    rho: f64,
    x: DVector<f64>,
    lambda: DVector<f64>,
    grad: DVector<f64>,
    h: DVector<f64>,
    w: DVector<f64>,
    cxdot: DVector<f64>,
}

impl<'a> FlowField<'a> {
    pub fn new(problem: &'a Problem, gains: &GainConfig, kind: FlowKind) -> Result<Self> {
        gains.validate()?;
        let (n, m) = (problem.n(), problem.m());
        let dual_gain = match kind {
            FlowKind::Pdgd => gains.eta,
            FlowKind::Pi => gains.k_i,
        };
        Ok(Self {
            problem,
            kind,
            dual_gain,
            k_p: gains.k_p,
            rho: gains.rho,
            x: DVector::zeros(n),
            lambda: DVector::zeros(m),
            grad: DVector::zeros(n),
            h: DVector::zeros(m),
            w: DVector::zeros(m),
            cxdot: DVector::zeros(m),
        })
    }

    pub fn problem(&self) -> &'a Problem {
        self.problem
    }

    pub fn dim(&self) -> usize {
        self.problem.n() + self.problem.m()
    }

    /// Writes `z'` into `dz`. Both slices have length `n + m`.
    pub fn eval(&mut self, z: &[f64], dz: &mut [f64]) {
        let n = self.problem.n();
        self.x.as_mut_slice().copy_from_slice(&z[..n]);
        self.lambda.as_mut_slice().copy_from_slice(&z[n..]);
        let (dx, dl) = dz.split_at_mut(n);
        self.eval_parts(dx, dl);
    }

    fn eval_parts(&mut self, dx: &mut [f64], dl: &mut [f64]) {
        let cs = self.problem.constraints();
        let c = cs.matrix();
        self.problem.objective().gradient_into(&self.x, &mut self.grad);
        cs.residual_into(&self.x, &mut self.h);
        clamped_multipliers_into(&self.h, &self.lambda, self.rho, &mut self.w);

        // x' = -grad f - C^T w
        self.grad.gemv_tr(1.0, c, &self.w, 1.0);
        for (o, g) in dx.iter_mut().zip(self.grad.iter()) {
            *o = -g;
        }

        for ((o, &hj), &lj) in dl.iter_mut().zip(self.h.iter()).zip(self.lambda.iter()) {
            *o = self.dual_gain * grad_lambda_scalar(hj, lj, self.rho);
        }
        if self.kind == FlowKind::Pi && self.k_p != 0.0 {
            // reuse x' from the primal line
            let xdot = nalgebra::DVectorView::from_slice(dx, dx.len());
            self.cxdot.gemv(1.0, c, &xdot, 0.0);
            for (o, v) in dl.iter_mut().zip(self.cxdot.iter()) {
                *o += self.k_p * v;
            }
        }
    }
}

fn field(problem: &Problem, gains: &GainConfig, state: &State, kind: FlowKind) -> Result<(DVector<f64>, DVector<f64>)> {
    problem.check_pair(&state.x, &state.lambda)?;
    let mut f = FlowField::new(problem, gains, kind)?;
    f.x.copy_from(&state.x);
    f.lambda.copy_from(&state.lambda);
    let mut dx = DVector::zeros(problem.n());
    let mut dl = DVector::zeros(problem.m());
    f.eval_parts(dx.as_mut_slice(), dl.as_mut_slice());
    Ok((dx, dl))
}

/// Primal-dual gradient flow `(x', lambda')`.
pub fn pdgd_field(problem: &Problem, gains: &GainConfig, state: &State) -> Result<(DVector<f64>, DVector<f64>)> {
    field(problem, gains, state, FlowKind::Pdgd)
}

/// Proportional-integral flow `(x', lambda')`.
pub fn pi_field(problem: &Problem, gains: &GainConfig, state: &State) -> Result<(DVector<f64>, DVector<f64>)> {
    field(problem, gains, state, FlowKind::Pi)
}

pub fn flow_field(
    problem: &Problem,
    gains: &GainConfig,
    state: &State,
    kind: FlowKind,
) -> Result<(DVector<f64>, DVector<f64>)> {
    field(problem, gains, state, kind)
}

/// KKT residual at `(x, lambda)`. Stationarity uses `lambda` as given; a
/// negative multiplier shows up in `dual_infeasibility`.
pub fn kkt_residual(problem: &Problem, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<KktResidual> {
    problem.check_pair(x, lambda)?;
    let mut grad = problem.objective().gradient(x);
    grad.gemv_tr(1.0, problem.constraints().matrix(), lambda, 1.0);
    let h = problem.constraints().residual(x)?;
    Ok(assemble_kkt(grad.norm(), &h, lambda))
}

fn assemble_kkt(stationarity: f64, h: &DVector<f64>, lambda: &DVector<f64>) -> KktResidual {
    let complementarity = h.iter().zip(lambda.iter()).map(|(a, b)| (a * b).abs()).sum::<f64>();
    let primal_infeasibility = positive_part_norm(h);
    let dual_infeasibility = lambda.iter().map(|&l| l.min(0.0).powi(2)).sum::<f64>().sqrt();
    let total = stationarity
        .max(complementarity)
        .max(primal_infeasibility)
        .max(dual_infeasibility);
    KktResidual {
        stationarity,
        complementarity,
        primal_infeasibility,
        dual_infeasibility,
        total,
    }
}

/// Reusable evaluator for KKT residual and constraint violation on stacked
/// states, used when recording traces.
#[derive(Debug, Clone)]
pub(crate) struct KktProbe<'a> {
    problem: &'a Problem,
    x: DVector<f64>,
    lambda: DVector<f64>,
    grad: DVector<f64>,
    h: DVector<f64>,
}

impl<'a> KktProbe<'a> {
    pub(crate) fn new(problem: &'a Problem) -> Self {
        Self {
            problem,
            x: DVector::zeros(problem.n()),
            lambda: DVector::zeros(problem.m()),
            grad: DVector::zeros(problem.n()),
            h: DVector::zeros(problem.m()),
        }
    }

    pub(crate) fn eval(&mut self, z: &[f64]) -> KktResidual {
        let n = self.problem.n();
        self.x.as_mut_slice().copy_from_slice(&z[..n]);
        self.lambda.as_mut_slice().copy_from_slice(&z[n..]);
        self.problem.objective().gradient_into(&self.x, &mut self.grad);
        self.grad.gemv_tr(1.0, self.problem.constraints().matrix(), &self.lambda, 1.0);
        self.problem.constraints().residual_into(&self.x, &mut self.h);
        assemble_kkt(self.grad.norm(), &self.h, &self.lambda)
    }

    pub(crate) fn x(&self) -> &DVector<f64> {
        &self.x
    }
}

pub(crate) fn check_stacked(problem: &Problem, z: &[f64]) -> Result<()> {
    check_dim("stacked state", problem.n() + problem.m(), z.len())
}
