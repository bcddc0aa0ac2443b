//! Convergence-rate bound for the PI flow and the scalar switched-mode
//! eigenvalue comparison between PI and PDGD.

use std::fmt;

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{symmetric_extreme_eigenvalues, ConstraintSet, GainConfig, Problem};

/// Relative threshold below which `C C^T` counts as singular.
pub const RANK_TOL: f64 = 1e-10;

/// Eigenvalue ranges entering the rate bound.
///
/// `g_lo`/`g_hi` bracket `H + rho C^T Gamma C` over every diagonal `Gamma`
/// with entries in `[0, 1]`, taking `Gamma = 0` for the lower end and
/// `Gamma = I` for the upper end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub g_lo: f64,
    pub g_hi: f64,
    pub c_lo: f64,
    pub c_hi: f64,
}

/// Extreme eigenvalues of `C C^T`. When `m > n` the matrix is singular and
/// the lower value is reported as zero.
pub fn gram_extremes(cs: &ConstraintSet) -> (f64, f64) {
    let c = cs.matrix();
    if cs.m() <= cs.n() {
        let (lo, hi) = symmetric_extreme_eigenvalues(&(c * c.transpose()));
        (lo.max(0.0), hi)
    } else {
        // nonzero spectrum of C C^T equals that of C^T C
        let (_, hi) = symmetric_extreme_eigenvalues(&(c.transpose() * c));
        (0.0, hi)
    }
}

/// Penalty parameter `min(1, 0.9 / c_hi)`, which keeps `rho < 1 / c_hi`.
pub fn default_rho(cs: &ConstraintSet) -> f64 {
    let (_, c_hi) = gram_extremes(cs);
    if c_hi > 0.0 {
        (0.9 / c_hi).min(1.0)
    } else {
        1.0
    }
}

fn bounds_unchecked(problem: &Problem, rho: f64) -> Result<SpectralBounds> {
    let q = problem
        .quadratic_form()
        .ok_or(Error::NotQuadratic("spectral bounds"))?;
    if !(rho > 0.0) {
        return Err(Error::invalid("rho", "must be positive"));
    }
    let c = problem.constraints().matrix();
    let (c_lo, c_hi) = gram_extremes(problem.constraints());
    let (g_lo, _) = symmetric_extreme_eigenvalues(&q.h);
    let full: DMatrix<f64> = &q.h + rho * c.transpose() * c;
    let (_, g_hi) = symmetric_extreme_eigenvalues(&full);
    Ok(SpectralBounds { g_lo, g_hi, c_lo, c_hi })
}

/// Spectral bounds of a quadratic problem. Fails when `C C^T` is
/// numerically singular.
pub fn spectral_bounds(problem: &Problem, rho: f64) -> Result<SpectralBounds> {
    let b = bounds_unchecked(problem, rho)?;
    if b.c_lo < RANK_TOL * b.c_hi || b.c_hi <= 0.0 {
        return Err(Error::RankDeficient {
            lambda_min: b.c_lo,
            lambda_max: b.c_hi,
        });
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HypothesisViolation {
    /// `rho >= 1 / c_hi`.
    RhoTooLarge { rho: f64, limit: f64 },
    KpNotPositive { k_p: f64 },
    /// `k_i < k_p`.
    KiBelowKp { k_i: f64, k_p: f64 },
    RankDeficient { c_lo: f64, c_hi: f64 },
}

impl fmt::Display for HypothesisViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RhoTooLarge { rho, limit } => write!(f, "rho = {rho} is not below 1/c_hi = {limit}"),
            Self::KpNotPositive { k_p } => write!(f, "K_p not positive (K_p = {k_p})"),
            Self::KiBelowKp { k_i, k_p } => write!(f, "K_i = {k_i} is below K_p = {k_p}"),
            Self::RankDeficient { c_lo, c_hi } => {
                write!(f, "C C^T singular (lambda_min = {c_lo:.3e}, lambda_max = {c_hi:.3e})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Exponential rate bound; informative only when `hypotheses_ok` and
    /// positive. Distances decay at least like `exp(-mu t / 2)`.
    pub mu: f64,
    pub hypotheses_ok: bool,
    pub violations: Vec<HypothesisViolation>,
}

impl RateReport {
    pub fn informative(&self) -> bool {
        self.hypotheses_ok && self.mu > 0.0
    }
}

/// `mu = min(k_p c_lo / 2, (2 k_i g_lo - k_p g_hi^2) / k_i)` and a check of
/// the assumptions under which it bounds the decay rate.
pub fn rate_bound(gains: &GainConfig, bounds: &SpectralBounds) -> RateReport {
    let (k_i, k_p, rho) = (gains.k_i, gains.k_p, gains.rho);
    let first = 0.5 * k_p * bounds.c_lo;
    let second = (2.0 * k_i * bounds.g_lo - k_p * bounds.g_hi * bounds.g_hi) / k_i;
    let mu = first.min(second);

    let mut violations = Vec::new();
    if bounds.c_hi <= 0.0 || bounds.c_lo < RANK_TOL * bounds.c_hi {
        violations.push(HypothesisViolation::RankDeficient {
            c_lo: bounds.c_lo,
            c_hi: bounds.c_hi,
        });
    }
    let limit = 1.0 / bounds.c_hi;
    if !(rho < limit) {
        violations.push(HypothesisViolation::RhoTooLarge { rho, limit });
    }
    if !(k_p > 0.0) {
        violations.push(HypothesisViolation::KpNotPositive { k_p });
    }
    if k_i < k_p {
        violations.push(HypothesisViolation::KiBelowKp { k_i, k_p });
    }
    RateReport {
        mu,
        hypotheses_ok: violations.is_empty(),
        violations,
    }
}

/// Bounds plus rate report for a quadratic problem. Rank deficiency is
/// reported as a violation rather than an error.
pub fn analyze(problem: &Problem, gains: &GainConfig) -> Result<(SpectralBounds, RateReport)> {
    let b = bounds_unchecked(problem, gains.rho)?;
    Ok((b, rate_bound(gains, &b)))
}

/// Least-squares slope of `ln(dist)` against `t` over the second half of the
/// samples (by time). Non-positive distances are skipped.
pub fn log_decay_slope(samples: &[(f64, f64)]) -> Option<f64> {
    let (t0, t1) = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return None,
    };
    let mid = 0.5 * (t0 + t1);
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(t, d)| *t >= mid && *d > 0.0 && d.is_finite())
        .map(|&(t, d)| (t, d.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Linear modes of the PI flow on `min w x^2 / 2 s.t. x <= 0`:
/// `A1` with the constraint active, `A2` with it inactive. Calling with
/// `k_p = 0, k_i = eta` gives the PDGD modes.
pub fn scalar_mode_matrices(w: f64, rho: f64, k_i: f64, k_p: f64) -> (Matrix2<f64>, Matrix2<f64>) {
    let a1 = Matrix2::new(-w - rho, -1.0, k_i - k_p * (w + rho), -k_p);
    let a2 = Matrix2::new(-w, 0.0, -w * k_p, -k_i / rho);
    (a1, a2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarModeEigen {
    pub mode1: [Complex64; 2],
    pub mode2: [f64; 2],
    pub abscissa1: f64,
    pub abscissa2: f64,
    /// Discriminant `(k_p + w + rho)^2 - 4 k_i` is negative.
    pub mode1_complex: bool,
}

/// Closed-form eigenvalues of the scalar modes.
///
/// Mode 1: `(-s +- sqrt(s^2 - 4 k_i)) / 2` with `s = k_p + w + rho`.
/// Mode 2: `{-w, -k_i / rho}`.
pub fn scalar_mode_eigenvalues(w: f64, rho: f64, k_i: f64, k_p: f64) -> ScalarModeEigen {
    let s = k_p + w + rho;
    let disc = s * s - 4.0 * k_i;
    let mode1 = if disc < 0.0 {
        let re = -0.5 * s;
        let im = 0.5 * (-disc).sqrt();
        [Complex64::new(re, im), Complex64::new(re, -im)]
    } else {
        // larger-magnitude root first, the other from the product k_i
        let q = -0.5 * (s + s.signum() * disc.sqrt());
        let other = if q != 0.0 { k_i / q } else { 0.0 };
        let (a, b) = if q >= other { (q, other) } else { (other, q) };
        [Complex64::new(a, 0.0), Complex64::new(b, 0.0)]
    };
    let mode2 = [-w, -k_i / rho];
    ScalarModeEigen {
        mode1,
        mode2,
        abscissa1: mode1[0].re.max(mode1[1].re),
        abscissa2: mode2[0].max(mode2[1]),
        mode1_complex: disc < 0.0,
    }
}

/// Best mode-1 spectral abscissa PDGD can reach on the scalar problem,
/// `-(w + rho) / 2`, attained for large `eta`.
pub fn pdgd_best_abscissa(w: f64, rho: f64) -> f64 {
    -0.5 * (w + rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    PiFaster,
    Equal,
    PdgdFaster,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Verdict::PiFaster => "PI faster",
            Verdict::Equal => "equal",
            Verdict::PdgdFaster => "PDGD faster",
        })
    }
}

/// PI versus PDGD (with `eta = k_i`) on the scalar problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub pi: ScalarModeEigen,
    pub pdgd: ScalarModeEigen,
    pub pdgd_best_abscissa: f64,
    /// Comparison of mode-1 abscissas.
    pub verdict: Verdict,
    pub beats_pdgd_best: bool,
}

pub fn compare_scalar_modes(w: f64, rho: f64, k_i: f64, k_p: f64) -> ModeComparison {
    let pi = scalar_mode_eigenvalues(w, rho, k_i, k_p);
    let pdgd = scalar_mode_eigenvalues(w, rho, k_i, 0.0);
    let best = pdgd_best_abscissa(w, rho);
    let verdict = if pi.abscissa1 < pdgd.abscissa1 {
        Verdict::PiFaster
    } else if pi.abscissa1 == pdgd.abscissa1 {
        Verdict::Equal
    } else {
        Verdict::PdgdFaster
    };
    ModeComparison {
        pi,
        pdgd,
        pdgd_best_abscissa: best,
        verdict,
        beats_pdgd_best: pi.abscissa1 < best,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ConstraintSet, QuadraticForm};
    use nalgebra::{dmatrix, dvector, DVector};

    fn gains(k_i: f64, k_p: f64, rho: f64) -> GainConfig {
        GainConfig {
            k_i,
            k_p,
            rho,
            ..GainConfig::default()
        }
    }

    #[test]
    fn identity_bounds() {
        let q = QuadraticForm::new(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        let cs = ConstraintSet::new(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        let p = Problem::quadratic(q, cs).unwrap();
        let b = spectral_bounds(&p, 0.5).unwrap();
        for (got, want) in [(b.g_lo, 1.0), (b.g_hi, 1.5), (b.c_lo, 1.0), (b.c_hi, 1.0)] {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_bounds() {
        let q = QuadraticForm::new(dmatrix![1.0, 0.0; 0.0, 4.0], dvector![0.0, 0.0]).unwrap();
        let cs = ConstraintSet::new(dmatrix![1.0, 0.0], dvector![0.0]).unwrap();
        let p = Problem::quadratic(q, cs).unwrap();
        let b = spectral_bounds(&p, 0.5).unwrap();
        for (got, want) in [(b.g_lo, 1.0), (b.g_hi, 4.0), (b.c_lo, 1.0), (b.c_hi, 1.0)] {
            assert!((got - want).abs() < 1e-12);
        }
        let tiny = spectral_bounds(&p, 1e-12).unwrap();
        assert!((tiny.g_hi - 4.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficiency_is_an_error() {
        let q = QuadraticForm::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let cs = ConstraintSet::new(dmatrix![1.0, 0.0; 2.0, 0.0], dvector![0.0, 0.0]).unwrap();
        let p = Problem::quadratic(q, cs).unwrap();
        assert!(matches!(spectral_bounds(&p, 0.1), Err(Error::RankDeficient { .. })));
        let (_, report) = analyze(&p, &gains(1.0, 0.1, 0.1)).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, HypothesisViolation::RankDeficient { .. })));
    }

    #[test]
    fn more_rows_than_columns_is_singular() {
        let cs = ConstraintSet::new(dmatrix![1.0; 2.0], dvector![0.0, 0.0]).unwrap();
        let (lo, hi) = gram_extremes(&cs);
        assert_eq!(lo, 0.0);
        assert!((hi - 5.0).abs() < 1e-12);
        assert!((default_rho(&cs) - 0.18).abs() < 1e-12);
    }

    #[test]
    fn rate_examples() {
        let b = SpectralBounds {
            g_lo: 1.0,
            g_hi: 2.0,
            c_lo: 1.0,
            c_hi: 1.0,
        };
        let r = rate_bound(&gains(1.0, 0.1, 0.5), &b);
        assert!((r.mu - 0.05).abs() < 1e-15);
        assert!(r.hypotheses_ok);

        let r = rate_bound(&gains(1.0, 0.0, 0.5), &b);
        assert_eq!(r.mu, 0.0);
        assert!(!r.hypotheses_ok);
        assert!(r.violations.contains(&HypothesisViolation::KpNotPositive { k_p: 0.0 }));

        let r = rate_bound(&gains(1.0, 1.0, 0.5), &b);
        assert!((r.mu - (-2.0)).abs() < 1e-15);
        assert!(!r.informative());

        let r = rate_bound(&gains(1.0, -0.7, 0.5), &b);
        assert!(!r.hypotheses_ok);
        assert_eq!(r.violations.len(), 1);
    }

    #[test]
    fn rate_flags_rho_and_ki() {
        let b = SpectralBounds {
            g_lo: 1.0,
            g_hi: 2.0,
            c_lo: 1.0,
            c_hi: 2.0,
        };
        let r = rate_bound(&gains(0.05, 0.1, 0.5), &b);
        assert!(r.violations.iter().any(|v| matches!(v, HypothesisViolation::RhoTooLarge { .. })));
        assert!(r.violations.iter().any(|v| matches!(v, HypothesisViolation::KiBelowKp { .. })));
    }

    #[test]
    fn mode_matrices_example() {
        let (a1, a2) = scalar_mode_matrices(1.0, 0.5, 4.0, 1.0);
        assert_eq!(a1, Matrix2::new(-1.5, -1.0, 2.5, -1.0));
        assert_eq!(a2, Matrix2::new(-1.0, 0.0, -1.0, -8.0));
        let (p1, p2) = scalar_mode_matrices(2.0, 0.3, 1.0, 0.0);
        assert_eq!(p1, Matrix2::new(-2.3, -1.0, 1.0, 0.0));
        assert_eq!(p2, Matrix2::new(-2.0, 0.0, 0.0, -1.0 / 0.3));
    }

    #[test]
    fn mode_eigen_example() {
        let e = scalar_mode_eigenvalues(1.0, 0.5, 4.0, 1.0);
        assert!(e.mode1_complex);
        assert!((e.abscissa1 + 1.25).abs() < 1e-15);
        assert!((e.mode1[0].im.abs() - 9.75f64.sqrt() / 2.0).abs() < 1e-14);
        assert_eq!(e.mode2, [-1.0, -8.0]);
    }

    #[test]
    fn small_ki_limit() {
        let e = scalar_mode_eigenvalues(1.0, 0.5, 1e-12, 0.7);
        assert!(!e.mode1_complex);
        assert!(e.mode1[0].re.abs() < 1e-11);
        assert!((e.mode1[1].re + 2.2).abs() < 1e-11);
    }

    #[test]
    fn verdicts() {
        assert_eq!(compare_scalar_modes(1.0, 0.5, 4.0, 0.0).verdict, Verdict::Equal);
        let c = compare_scalar_modes(1.0, 0.5, 4.0, 1.0);
        assert_eq!(c.verdict, Verdict::PiFaster);
        assert!(c.beats_pdgd_best);
    }

    #[test]
    fn slope_of_pure_exponential() {
        let s: Vec<(f64, f64)> = (0..100).map(|k| (k as f64 * 0.1, (-0.3 * k as f64 * 0.1).exp())).collect();
        assert!((log_decay_slope(&s).unwrap() + 0.3).abs() < 1e-12);
        assert!(log_decay_slope(&s[..1]).is_none());
    }
}
