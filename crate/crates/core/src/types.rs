//! Problem, state, gain and trace types shared across the crate.
//!
//! A [`Problem`] is `min f(x)` subject to `C x - d <= 0`, with `f` smooth and
//! strongly convex. Quadratic objectives `f(x) = 1/2 x^T H x + b^T x` carry
//! their matrices so that spectral analysis and exact oracles can use them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Smooth objective with an analytic gradient.
pub trait Objective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> f64;

    /// Writes `grad f(x)` into `out`, which has length `dim()`.
    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>);

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.gradient_into(x, &mut out);
        out
    }
}

/// `f(x) = 1/2 x^T H x + b^T x` with `H` symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForm {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QuadraticForm {
    pub fn new(h: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::invalid("H", "matrix must be square"));
        }
        check_dim("quadratic form b", h.nrows(), b.len())?;
        let scale = h.amax().max(1.0);
        for i in 0..h.nrows() {
            for j in 0..i {
                if (h[(i, j)] - h[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::invalid("H", "matrix must be symmetric"));
                }
            }
        }
        Ok(Self { h, b })
    }
}

impl Objective for QuadraticForm {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.b.dot(x)
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        out.copy_from(&self.b);
        out.gemv(1.0, &self.h, x, 1.0);
    }
}

/// `f(x) = c^T x`. Not strongly convex; used for the l-infinity fitting LP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearObjective {
    pub c: DVector<f64>,
}

impl Objective for LinearObjective {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.c.dot(x)
    }

    fn gradient_into(&self, _x: &DVector<f64>, out: &mut DVector<f64>) {
        out.copy_from(&self.c);
    }
}

/// Linear inequality constraints `h(x) = C x - d <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    c: DMatrix<f64>,
    d: DVector<f64>,
}

impl ConstraintSet {
    pub fn new(c: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        if c.nrows() == 0 || c.ncols() == 0 {
            return Err(Error::invalid("C", "need at least one row and one column"));
        }
        check_dim("constraint vector d", c.nrows(), d.len())?;
        Ok(Self { c, d })
    }

    /// Number of constraints.
    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    /// Number of variables.
    pub fn n(&self) -> usize {
        self.c.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.d
    }

    /// `h(x) = C x - d`.
    pub fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("h(x) argument", self.n(), x.len())?;
        let mut out = self.d.clone();
        self.residual_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn residual_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        out.copy_from(&self.d);
        out.gemv(1.0, &self.c, x, -1.0);
    }
}

/// Eigenvalue range of the objective Hessian: strong convexity and
/// smoothness constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianBounds {
    pub lower: f64,
    pub upper: f64,
}

impl HessianBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower <= upper) {
            return Err(Error::invalid(
                "hessian_bounds",
                format!("need 0 < lower <= upper, got ({lower}, {upper})"),
            ));
        }
        Ok(Self { lower, upper })
    }
}

/// Linearly constrained minimization problem.
#[derive(Clone)]
pub struct Problem {
    objective: Arc<dyn Objective>,
    constraints: ConstraintSet,
    hessian_bounds: Option<HessianBounds>,
    quadratic: Option<QuadraticForm>,
    linear: Option<DVector<f64>>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("n", &self.n())
            .field("m", &self.m())
            .field("hessian_bounds", &self.hessian_bounds)
            .field("quadratic", &self.quadratic.is_some())
            .finish()
    }
}

impl Problem {
    /// General smooth objective. `hessian_bounds` must be supplied by the
    /// caller when known.
    pub fn new(
        objective: Arc<dyn Objective>,
        constraints: ConstraintSet,
        hessian_bounds: Option<HessianBounds>,
    ) -> Result<Self> {
        check_dim("objective dimension", constraints.n(), objective.dim())?;
        Ok(Self {
            objective,
            constraints,
            hessian_bounds,
            quadratic: None,
            linear: None,
        })
    }

    /// Quadratic objective; `H` must be positive definite. Hessian bounds are
    /// computed with a symmetric eigensolver.
    pub fn quadratic(q: QuadraticForm, constraints: ConstraintSet) -> Result<Self> {
        check_dim("quadratic form dimension", constraints.n(), q.dim())?;
        let (lo, hi) = symmetric_extreme_eigenvalues(&q.h);
        if !(lo > 0.0) {
            return Err(Error::invalid(
                "H",
                format!("matrix must be positive definite, lambda_min = {lo:.3e}"),
            ));
        }
        Ok(Self {
            objective: Arc::new(q.clone()),
            constraints,
            hessian_bounds: Some(HessianBounds::new(lo, hi)?),
            quadratic: Some(q),
            linear: None,
        })
    }

    /// Linear objective `c^T x`.
    pub fn linear(c: DVector<f64>, constraints: ConstraintSet) -> Result<Self> {
        let mut p = Self::new(Arc::new(LinearObjective { c: c.clone() }), constraints, None)?;
        p.linear = Some(c);
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.constraints.n()
    }

    pub fn m(&self) -> usize {
        self.constraints.m()
    }

    pub fn objective(&self) -> &dyn Objective {
        self.objective.as_ref()
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn hessian_bounds(&self) -> Option<HessianBounds> {
        self.hessian_bounds
    }

    pub fn quadratic_form(&self) -> Option<&QuadraticForm> {
        self.quadratic.as_ref()
    }

    /// Cost vector when the objective is linear.
    pub fn linear_cost(&self) -> Option<&DVector<f64>> {
        self.linear.as_ref()
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("objective argument", self.n(), x.len())?;
        Ok(self.objective.value(x))
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("objective argument", self.n(), x.len())?;
        Ok(self.objective.gradient(x))
    }

    pub(crate) fn check_primal(&self, x: &DVector<f64>) -> Result<()> {
        check_dim("primal vector x", self.n(), x.len())
    }

    pub(crate) fn check_pair(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<()> {
        self.check_primal(x)?;
        check_dim("multiplier vector lambda", self.m(), lambda.len())
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_extreme_eigenvalues(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(a.clone());
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    (lo, hi)
}

/// Point `(x, lambda)` of a flow at virtual time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub t: f64,
}

impl State {
    pub fn new(x: DVector<f64>, lambda: DVector<f64>) -> Self {
        Self { x, lambda, t: 0.0 }
    }

    /// `x = 0, lambda = 0` at `t = 0`.
    pub fn zeros(problem: &Problem) -> Self {
        Self::new(DVector::zeros(problem.n()), DVector::zeros(problem.m()))
    }

    /// Concatenation `z = (x, lambda)`.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.x.len();
        DVector::from_fn(n + self.lambda.len(), |i, _| {
            if i < n {
                self.x[i]
            } else {
                self.lambda[i - n]
            }
        })
    }

    pub fn from_stacked(z: &DVector<f64>, n: usize, t: f64) -> Self {
        Self {
            x: z.rows(0, n).into_owned(),
            lambda: z.rows(n, z.len() - n).into_owned(),
            t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Dormand-Prince 5(4).
    #[default]
    Rk45,
    /// Bogacki-Shampine 3(2).
    Rk23,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Method::Rk45 => "rk45",
            Method::Rk23 => "rk23",
        })
    }
}

/// Flow hyperparameters and integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainConfig {
    /// Penalty parameter of the augmented Lagrangian.
    pub rho: f64,
    /// Dual gain of the primal-dual gradient flow.
    pub eta: f64,
    /// Integral gain of the PI flow.
    pub k_i: f64,
    /// Proportional gain of the PI flow. Any sign is accepted.
    pub k_p: f64,
    pub integrator: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub t_final: f64,
    pub kkt_stop_tol: Option<f64>,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            eta: 1.0,
            k_i: 1.0,
            k_p: -0.7,
            integrator: Method::Rk45,
            rel_tol: 1e-3,
            abs_tol: 1e-6,
            t_final: 30.0,
            kkt_stop_tol: None,
        }
    }
}

impl GainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("eta", self.eta),
            ("k_i", self.k_i),
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("t_final", self.t_final),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        if !self.k_p.is_finite() {
            return Err(Error::invalid("k_p", "must be finite"));
        }
        if let Some(tol) = self.kkt_stop_tol {
            if !(tol > 0.0) {
                return Err(Error::invalid("kkt_stop_tol", format!("must be positive, got {tol}")));
            }
        }
        Ok(())
    }
}

/// One recorded integrator step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    pub constraint_violation: f64,
    pub kkt_residual: f64,
    pub dist_to_opt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub samples: Vec<TraceSample>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub wall_time: f64,
}

impl Trace {
    pub fn last(&self) -> Option<&TraceSample> {
        self.samples.last()
    }

    /// First recorded step whose KKT residual is at most `tol`.
    pub fn first_step_reaching(&self, tol: f64) -> Option<usize> {
        self.samples
            .iter()
            .find(|s| s.kkt_residual <= tol)
            .map(|s| s.step)
    }
}

/// `|| max(C x - d, 0) ||_2`.
pub fn constraint_violation(problem: &Problem, x: &DVector<f64>) -> Result<f64> {
    let h = problem.constraints().residual(x)?;
    Ok(positive_part_norm(&h))
}

pub(crate) fn positive_part_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|&e| e.max(0.0).powi(2)).sum::<f64>().sqrt()
}
