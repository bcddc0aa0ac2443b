//! Augmented Lagrangian `L(x, lambda) = f(x) + sum_j g_j(h_j(x), lambda_j)`.
//!
//! The per-constraint penalty is
//!
//! ```text
//! g_j = lambda_j h_j + rho/2 h_j^2     if rho h_j + lambda_j >= 0
//!     = -lambda_j^2 / (2 rho)          otherwise
//! ```
//!
//! which is continuously differentiable across the switching surface
//! `h_j = -lambda_j / rho`. The flows never project `lambda`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::types::Problem;

/// Penalty value and which constraints sit on the active branch.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyEval {
    pub value: f64,
    /// `true` where `rho h_j(x) + lambda_j >= 0`.
    pub active_mask: Vec<bool>,
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("rho", format!("must be positive, got {rho}")))
    }
}

#[inline]
fn penalty_unchecked(h: f64, lambda: f64, rho: f64) -> f64 {
    if rho * h + lambda >= 0.0 {
        lambda * h + 0.5 * rho * h * h
    } else {
        -lambda * lambda / (2.0 * rho)
    }
}

/// Scalar penalty `g_j(h_j, lambda_j)`.
pub fn penalty_value(h: f64, lambda: f64, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(penalty_unchecked(h, lambda, rho))
}

/// Sum of the penalties at `(x, lambda)` together with the active mask.
pub fn penalty(problem: &Problem, x: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> Result<PenaltyEval> {
    check_rho(rho)?;
    problem.check_pair(x, lambda)?;
    let h = problem.constraints().residual(x)?;
    let mut value = 0.0;
    let mut active_mask = Vec::with_capacity(h.len());
    for (&hj, &lj) in h.iter().zip(lambda.iter()) {
        value += penalty_unchecked(hj, lj, rho);
        active_mask.push(rho * hj + lj >= 0.0);
    }
    Ok(PenaltyEval { value, active_mask })
}

/// `max(rho h(x) + lambda, 0)` componentwise, written into `out`.
pub(crate) fn clamped_multipliers_into(h: &DVector<f64>, lambda: &DVector<f64>, rho: f64, out: &mut DVector<f64>) {
    for ((o, &hj), &lj) in out.iter_mut().zip(h.iter()).zip(lambda.iter()) {
        *o = (rho * hj + lj).max(0.0);
    }
}

/// `grad_x g = sum_j max(rho h_j + lambda_j, 0) C_j^T`.
pub fn grad_x_penalty(problem: &Problem, x: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    check_rho(rho)?;
    problem.check_pair(x, lambda)?;
    let h = problem.constraints().residual(x)?;
    let mut w = DVector::zeros(h.len());
    clamped_multipliers_into(&h, lambda, rho, &mut w);
    Ok(problem.constraints().matrix().tr_mul(&w))
}

/// `grad_lambda g_j = (max(rho h_j + lambda_j, 0) - lambda_j) / rho`.
pub fn grad_lambda_penalty(
    problem: &Problem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    rho: f64,
) -> Result<DVector<f64>> {
    check_rho(rho)?;
    problem.check_pair(x, lambda)?;
    let h = problem.constraints().residual(x)?;
    Ok(DVector::from_iterator(
        h.len(),
        h.iter().zip(lambda.iter()).map(|(&hj, &lj)| grad_lambda_scalar(hj, lj, rho)),
    ))
}

#[inline]
pub(crate) fn grad_lambda_scalar(h: f64, lambda: f64, rho: f64) -> f64 {
    ((rho * h + lambda).max(0.0) - lambda) / rho
}

/// `L(x, lambda) = f(x) + sum_j g_j`.
pub fn lagrangian_value(problem: &Problem, x: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> Result<f64> {
    let p = penalty(problem, x, lambda, rho)?;
    Ok(problem.objective().value(x) + p.value)
}
