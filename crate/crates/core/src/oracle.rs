//! Exact reference solutions by enumeration, for checking flow endpoints.
//!
//! * [`active_set_qp`]: strongly convex QP, every subset of constraints is
//!   tried as the active set.
//! * [`lp_vertex`]: LP over a bounded polyhedron, every basis of constraint
//!   rows is tried as a vertex.
//! * [`polish_qp`]: active-set refinement started from an approximate
//!   point, for problems too large to enumerate.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::kkt_residual;
use crate::error::{Error, Result};
use crate::par;
use crate::types::{Objective, Problem, QuadraticForm};

/// Default cap on the number of constraints for subset enumeration.
pub const DEFAULT_MAX_ENUM: usize = 20;
/// Multipliers down to this value count as nonnegative.
pub const DUAL_TOL: f64 = 1e-10;
/// Primal feasibility slack per constraint, scaled by the row magnitude.
pub const PRIMAL_TOL: f64 = 1e-10;

const LP_MAX_VARS: usize = 10;
const LP_MAX_BASES: u128 = 50_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub x_star: DVector<f64>,
    pub lambda_star: DVector<f64>,
    /// Sorted constraint indices.
    pub active_set: Vec<usize>,
    pub objective: f64,
}

/// Solves `a y = b` by full-pivot LU; `None` when `a` is numerically
/// singular.
fn solve_checked(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.amax();
    if scale == 0.0 {
        return None;
    }
    let lu = a.full_piv_lu();
    let u = lu.u();
    let min_pivot = u.diagonal().iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if min_pivot <= 1e-13 * scale {
        return None;
    }
    let y = lu.solve(b)?;
    y.iter().all(|v| v.is_finite()).then_some(y)
}

/// Equality-constrained QP on the rows `set`:
/// `[H C_S^T; C_S 0] (x, lambda_S) = (-b, d_S)`.
fn equality_kkt(q: &QuadraticForm, c: &DMatrix<f64>, d: &DVector<f64>, set: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = q.h.nrows();
    let k = set.len();
    let mut a = DMatrix::zeros(n + k, n + k);
    a.view_mut((0, 0), (n, n)).copy_from(&q.h);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&q.b));
    for (r, &j) in set.iter().enumerate() {
        for col in 0..n {
            a[(n + r, col)] = c[(j, col)];
            a[(col, n + r)] = c[(j, col)];
        }
        rhs[n + r] = d[j];
    }
    let sol = solve_checked(a, &rhs)?;
    Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
}

fn row_slack_tol(c: &DMatrix<f64>, d: &DVector<f64>, x: &DVector<f64>, j: usize) -> f64 {
    let mag: f64 = c.row(j).iter().zip(x.iter()).map(|(a, b)| (a * b).abs()).sum();
    PRIMAL_TOL * (1.0 + mag + d[j].abs())
}

fn mask_to_set(mask: u64, m: usize) -> Vec<usize> {
    (0..m).filter(|j| mask >> j & 1 == 1).collect()
}

#[derive(Debug, Clone)]
struct Candidate {
    objective: f64,
    set: Vec<usize>,
    x: DVector<f64>,
    lambda_s: DVector<f64>,
}

/// Lower objective wins; near ties go to the lexicographically smaller set.
fn better(a: &Candidate, b: &Candidate) -> bool {
    let tol = 1e-12 * (1.0 + a.objective.abs().max(b.objective.abs()));
    if (a.objective - b.objective).abs() <= tol {
        a.set.cmp(&b.set) == Ordering::Less
    } else {
        a.objective < b.objective
    }
}

fn merge(best: Option<Candidate>, c: Option<Candidate>) -> Option<Candidate> {
    match (best, c) {
        (None, c) => c,
        (b, None) => b,
        (Some(b), Some(c)) => Some(if better(&c, &b) { c } else { b }),
    }
}

/// Options for [`active_set_qp_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumOptions {
    pub max_enum: usize,
    /// Shuffle the subset visiting order with this seed.
    pub order_seed: Option<u64>,
}

impl Default for EnumOptions {
    fn default() -> Self {
        Self {
            max_enum: DEFAULT_MAX_ENUM,
            order_seed: None,
        }
    }
}

/// Exact QP solution by enumerating active sets.
pub fn active_set_qp(problem: &Problem, max_enum: usize) -> Result<OracleSolution> {
    active_set_qp_with(
        problem,
        &EnumOptions {
            max_enum,
            order_seed: None,
        },
    )
}

pub fn active_set_qp_with(problem: &Problem, opts: &EnumOptions) -> Result<OracleSolution> {
    let q = problem
        .quadratic_form()
        .ok_or(Error::NotQuadratic("active-set enumeration"))?;
    let m = problem.m();
    if m > opts.max_enum || m > 40 {
        return Err(Error::invalid(
            "max_enum",
            format!("{m} constraints exceed the enumeration limit {}", opts.max_enum.min(40)),
        ));
    }
    let c = problem.constraints().matrix();
    let d = problem.constraints().rhs();
    let total = 1u64 << m;
    let mut order: Vec<u64> = (0..total).collect();
    if let Some(seed) = opts.order_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    let evaluate = |mask: u64| -> Option<Candidate> {
        let set = mask_to_set(mask, m);
        let (x, lambda_s) = equality_kkt(q, c, d, &set)?;
        if lambda_s.iter().any(|&l| l < -DUAL_TOL) {
            return None;
        }
        let h = c * &x - d;
        if (0..m).any(|j| h[j] > row_slack_tol(c, d, &x, j)) {
            return None;
        }
        Some(Candidate {
            objective: q.value(&x),
            set,
            x,
            lambda_s,
        })
    };

    const CHUNK: usize = 256;
    let chunks = order.len().div_ceil(CHUNK);
    let best = par::map_range(chunks, |ci| {
        order[ci * CHUNK..((ci + 1) * CHUNK).min(order.len())]
            .iter()
            .fold(None, |acc, &mask| merge(acc, evaluate(mask)))
    })
    .into_iter()
    .fold(None, merge)
    .ok_or_else(|| Error::Infeasible("no active set satisfies the KKT sign and feasibility tests".into()))?;

    let mut lambda_star = DVector::zeros(m);
    for (&j, &l) in best.set.iter().zip(best.lambda_s.iter()) {
        lambda_star[j] = l.max(0.0);
    }
    Ok(OracleSolution {
        x_star: best.x,
        lambda_star,
        active_set: best.set,
        objective: best.objective,
    })
}

/// Refines an approximate KKT point of a quadratic problem by a primal-dual
/// active-set iteration started from the constraints that look active at
/// `(x, lambda)`. Fails unless the result has KKT residual at most `1e-9`.
pub fn polish_qp(problem: &Problem, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<OracleSolution> {
    problem.check_pair(x, lambda)?;
    let q = problem.quadratic_form().ok_or(Error::NotQuadratic("KKT polish"))?;
    let c = problem.constraints().matrix();
    let d = problem.constraints().rhs();
    let m = problem.m();
    let h0 = c * x - d;
    let guess_tol = 1e-6 * (1.0 + lambda.amax());
    let mut set: Vec<usize> = (0..m)
        .filter(|&j| lambda[j] > guess_tol || h0[j] > -guess_tol)
        .collect();

    for _ in 0..(4 * m + 10) {
        let Some((xs, ls)) = equality_kkt(q, c, d, &set) else {
            // dependent rows: drop the one with the smallest multiplier guess
            let drop = set
                .iter()
                .enumerate()
                .min_by(|a, b| lambda[*a.1].total_cmp(&lambda[*b.1]))
                .map(|(i, _)| i);
            match drop {
                Some(i) => {
                    set.remove(i);
                    continue;
                }
                None => break,
            }
        };
        let most_negative = ls
            .iter()
            .enumerate()
            .filter(|(_, &l)| l < -DUAL_TOL)
            .min_by(|a, b| a.1.total_cmp(b.1));
        if let Some((i, _)) = most_negative {
            set.remove(i);
            continue;
        }
        let h = c * &xs - d;
        let most_violated = (0..m)
            .filter(|j| !set.contains(j) && h[*j] > row_slack_tol(c, d, &xs, *j))
            .max_by(|a, b| h[*a].total_cmp(&h[*b]));
        if let Some(j) = most_violated {
            set.push(j);
            set.sort_unstable();
            continue;
        }
        let mut lambda_star = DVector::zeros(m);
        for (&j, &l) in set.iter().zip(ls.iter()) {
            lambda_star[j] = l.max(0.0);
        }
        let res = kkt_residual(problem, &xs, &lambda_star)?;
        if res.total > 1e-9 {
            return Err(Error::Infeasible(format!(
                "KKT polish ended with residual {:.3e}",
                res.total
            )));
        }
        return Ok(OracleSolution {
            objective: q.value(&xs),
            x_star: xs,
            lambda_star,
            active_set: set,
        });
    }
    Err(Error::Infeasible("KKT polish did not settle on an active set".into()))
}

/// Exact LP solution `min c^T y s.t. A y <= e` by vertex enumeration.
///
/// Requires a problem built with [`Problem::linear`] and at most ten
/// variables. Multipliers come from a dual-feasible optimal basis.
pub fn lp_vertex(problem: &Problem) -> Result<OracleSolution> {
    let cost = problem.linear_cost().ok_or(Error::invalid("objective", "vertex enumeration needs a linear objective"))?;
    let a = problem.constraints().matrix();
    let e = problem.constraints().rhs();
    let (m, nv) = (problem.m(), problem.n());
    if nv > LP_MAX_VARS {
        return Err(Error::invalid("n", format!("{nv} variables exceed the enumeration limit {LP_MAX_VARS}")));
    }
    if m < nv {
        return Err(Error::Infeasible(format!("{m} constraints cannot define a vertex in {nv} dimensions")));
    }
    if binomial(m, nv) > LP_MAX_BASES {
        return Err(Error::invalid("m", format!("C({m}, {nv}) bases exceed the enumeration limit")));
    }

    let evaluate = |basis: &[usize]| -> Option<LpCandidate> {
        let mut sub = DMatrix::zeros(nv, nv);
        let mut rhs = DVector::zeros(nv);
        for (r, &j) in basis.iter().enumerate() {
            sub.row_mut(r).copy_from(&a.row(j));
            rhs[r] = e[j];
        }
        let y = solve_checked(sub.clone(), &rhs)?;
        let h = a * &y - e;
        if (0..m).any(|j| h[j] > 1e-9 * (1.0 + e[j].abs() + a.row(j).iter().zip(y.iter()).map(|(p, q)| (p * q).abs()).sum::<f64>())) {
            return None;
        }
        // c + A_B^T mu = 0
        let mu = solve_checked(sub.transpose(), &(-cost))?;
        Some(LpCandidate {
            objective: cost.dot(&y),
            dual_feasible: mu.iter().all(|&v| v >= -1e-9),
            basis: basis.to_vec(),
            y,
            mu,
        })
    };

    // Fan out over the first basis index; the rest is enumerated in order.
    let per_first = par::map_range(m - nv + 1, |first| {
        let mut acc: Option<LpCandidate> = None;
        let mut basis = Vec::with_capacity(nv);
        basis.push(first);
        for_each_combination(first + 1, m, nv - 1, &mut basis, &mut |b| {
            if let Some(c) = evaluate(b) {
                acc = Some(match acc.take() {
                    Some(best) if !lp_better(&c, &best) => best,
                    _ => c,
                });
            }
        });
        acc
    });

    let mut best: Option<LpCandidate> = None;
    for c in per_first.into_iter().flatten() {
        best = Some(match best {
            Some(b) if !lp_better(&c, &b) => b,
            _ => c,
        });
    }
    let best = best.ok_or_else(|| Error::Infeasible("no feasible vertex".into()))?;
    if !best.dual_feasible {
        return Err(Error::Unbounded);
    }
    let mut lambda_star = DVector::zeros(m);
    for (&j, &v) in best.basis.iter().zip(best.mu.iter()) {
        lambda_star[j] = v.max(0.0);
    }
    Ok(OracleSolution {
        x_star: best.y,
        lambda_star,
        active_set: best.basis,
        objective: best.objective,
    })
}

#[derive(Debug, Clone)]
struct LpCandidate {
    objective: f64,
    dual_feasible: bool,
    basis: Vec<usize>,
    y: DVector<f64>,
    mu: DVector<f64>,
}

/// Lower objective first; among ties prefer a dual-feasible basis, then the
/// lexicographically smaller one.
fn lp_better(a: &LpCandidate, b: &LpCandidate) -> bool {
    let tol = 1e-9 * (1.0 + a.objective.abs().max(b.objective.abs()));
    if (a.objective - b.objective).abs() > tol {
        return a.objective < b.objective;
    }
    if a.dual_feasible != b.dual_feasible {
        return a.dual_feasible;
    }
    a.basis < b.basis
}

fn for_each_combination(start: usize, end: usize, k: usize, buf: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if k == 0 {
        f(buf);
        return;
    }
    for i in start..=end.saturating_sub(k) {
        buf.push(i);
        for_each_combination(i + 1, end, k - 1, buf, f);
        buf.pop();
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ConstraintSet;
    use nalgebra::{dmatrix, dvector};

    fn scaled_square(w: f64, d: f64) -> Problem {
        let q = QuadraticForm::new(dmatrix![w], dvector![0.0]).unwrap();
        Problem::quadratic(q, ConstraintSet::new(dmatrix![1.0], dvector![d]).unwrap()).unwrap()
    }

    #[test]
    fn interior_optimum() {
        let s = active_set_qp(&scaled_square(1.0, 1.0), DEFAULT_MAX_ENUM).unwrap();
        assert_eq!(s.x_star, dvector![0.0]);
        assert_eq!(s.lambda_star, dvector![0.0]);
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn boundary_optimum() {
        let s = active_set_qp(&scaled_square(1.0, -1.0), DEFAULT_MAX_ENUM).unwrap();
        assert!((s.x_star[0] + 1.0).abs() < 1e-14);
        assert!((s.lambda_star[0] - 1.0).abs() < 1e-14);
        assert_eq!(s.active_set, vec![0]);
    }

    #[test]
    fn degenerate_boundary_optimum() {
        let s = active_set_qp(&scaled_square(2.5, 0.0), DEFAULT_MAX_ENUM).unwrap();
        assert_eq!(s.x_star[0], 0.0);
        assert_eq!(s.lambda_star[0], 0.0);
    }

    #[test]
    fn infeasible_qp_is_reported() {
        // x <= -1 and -x <= -1
        let q = QuadraticForm::new(dmatrix![1.0], dvector![0.0]).unwrap();
        let cs = ConstraintSet::new(dmatrix![1.0; -1.0], dvector![-1.0, -1.0]).unwrap();
        let p = Problem::quadratic(q, cs).unwrap();
        assert!(matches!(active_set_qp(&p, 20), Err(Error::Infeasible(_))));
    }

    #[test]
    fn enumeration_limit() {
        assert!(active_set_qp(&scaled_square(1.0, 0.0), 0).is_err());
    }

    #[test]
    fn polish_recovers_boundary_solution() {
        let p = scaled_square(1.0, -1.0);
        let s = polish_qp(&p, &dvector![-0.99], &dvector![0.98]).unwrap();
        assert!((s.x_star[0] + 1.0).abs() < 1e-14);
        assert!((s.lambda_star[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lp_half_line() {
        // min y s.t. -y <= 0
        let p = Problem::linear(dvector![1.0], ConstraintSet::new(dmatrix![-1.0], dvector![0.0]).unwrap()).unwrap();
        let s = lp_vertex(&p).unwrap();
        assert_eq!(s.x_star[0], 0.0);
        assert_eq!(s.lambda_star[0], 1.0);
    }

    #[test]
    fn lp_unbounded() {
        // min -y s.t. -y <= 0
        let p = Problem::linear(dvector![-1.0], ConstraintSet::new(dmatrix![-1.0], dvector![0.0]).unwrap()).unwrap();
        assert!(matches!(lp_vertex(&p), Err(Error::Unbounded)));
    }

    #[test]
    fn lp_one_sample_linf() {
        // variables (Delta); -Delta <= 2 - 0 <= Delta with no parameters
        // rows: -Delta <= -2 and -Delta <= 2
        let p = Problem::linear(
            dvector![1.0],
            ConstraintSet::new(dmatrix![-1.0; -1.0], dvector![-2.0, 2.0]).unwrap(),
        )
        .unwrap();
        let s = lp_vertex(&p).unwrap();
        assert!((s.x_star[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(40, 10), 847_660_528);
    }
}
