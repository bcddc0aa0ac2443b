//! Problem generators: seeded random QPs and the l-infinity system
//! identification LP built from a fixed-pole filter bank.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::types::{ConstraintSet, Problem, QuadraticForm};

/// `min 1/2 x^T (I + W^T W) x + b^T x  s.t.  C x <= d` with `W, b, C, d`
/// i.i.d. standard normal from a ChaCha8 stream seeded by `seed`.
pub fn random_qp(n: usize, m: usize, seed: u64) -> Result<Problem> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("n/m", "dimensions must be at least one"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let w = DMatrix::from_fn(n, n, |_, _| draw());
    let b = DVector::from_fn(n, |_, _| draw());
    let c = DMatrix::from_fn(m, n, |_, _| draw());
    let d = DVector::from_fn(m, |_, _| draw());
    let h = DMatrix::identity(n, n) + w.transpose() * &w;
    // symmetrize away rounding in W^T W
    let h = (&h + h.transpose()) * 0.5;
    Problem::quadratic(QuadraticForm::new(h, b)?, ConstraintSet::new(c, d)?)
}

/// Discrete-time rational transfer function, coefficients in descending
/// powers of `z`. The denominator is stored monic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl TransferFunction {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        let num = strip_leading_zeros(num);
        let den = strip_leading_zeros(den);
        if den.is_empty() {
            return Err(Error::invalid("den", "denominator must be nonzero"));
        }
        if num.len() > den.len() {
            return Err(Error::invalid("num", "transfer function must be proper"));
        }
        let lead = den[0];
        let num = if num.is_empty() { vec![0.0] } else { num };
        Ok(Self {
            num: num.iter().map(|v| v / lead).collect(),
            den: den.iter().map(|v| v / lead).collect(),
        })
    }

    /// `(-0.4 z^2 + 0.32 z + 0.26) / (z^3 - 1.9 z^2 + 1.21 z - 0.259)`.
    pub fn reference_plant() -> Self {
        Self::new(vec![-0.4, 0.32, 0.26], vec![1.0, -1.9, 1.21, -0.259]).expect("valid plant")
    }

    pub fn numerator(&self) -> &[f64] {
        &self.num
    }

    pub fn denominator(&self) -> &[f64] {
        &self.den
    }

    /// Roots of the denominator, from the companion matrix.
    pub fn poles(&self) -> Vec<num_complex::Complex64> {
        let p = self.den.len() - 1;
        if p == 0 {
            return Vec::new();
        }
        let mut comp = DMatrix::zeros(p, p);
        for j in 0..p {
            comp[(0, j)] = -self.den[j + 1];
        }
        for i in 1..p {
            comp[(i, i - 1)] = 1.0;
        }
        comp.complex_eigenvalues().iter().copied().collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|z| z.norm() < 1.0)
    }
}

fn strip_leading_zeros(mut v: Vec<f64>) -> Vec<f64> {
    let first = v.iter().position(|&c| c != 0.0).unwrap_or(v.len());
    v.drain(..first);
    v
}

/// Output of `tf` driven by `u` from rest.
pub fn simulate_tf(tf: &TransferFunction, u: &[f64]) -> Result<Vec<f64>> {
    if u.is_empty() {
        return Err(Error::invalid("u", "input sequence is empty"));
    }
    let p = tf.den.len() - 1;
    let q = tf.num.len() - 1;
    let delay = p - q;
    let mut y = vec![0.0; u.len()];
    for k in 0..u.len() {
        let mut acc = 0.0;
        for i in 1..=p.min(k) {
            acc -= tf.den[i] * y[k - i];
        }
        for (i, &b) in tf.num.iter().enumerate() {
            if let Some(idx) = k.checked_sub(delay + i) {
                acc += b * u[idx];
            }
        }
        y[k] = acc;
    }
    Ok(y)
}

/// 37 poles from -0.9 to 0.9 in steps of 0.05.
pub fn default_poles() -> Vec<f64> {
    (0..37).map(|k| (k as f64 - 18.0) / 20.0).collect()
}

/// Regressor matrix with column `i` given by `z_i(k) = p_i z_i(k-1) + u(k)`
/// from zero history, i.e. `u` filtered by `z / (z - p_i)`.
pub fn filter_bank(u: &[f64], poles: &[f64]) -> Result<DMatrix<f64>> {
    if let Some(&p) = poles.iter().find(|p| !(p.abs() < 1.0)) {
        return Err(Error::invalid("poles", format!("pole {p} is not strictly inside the unit circle")));
    }
    let mut z = DMatrix::zeros(u.len(), poles.len());
    for (i, &p) in poles.iter().enumerate() {
        let mut prev = 0.0;
        for (k, &uk) in u.iter().enumerate() {
            prev = p * prev + uk;
            z[(k, i)] = prev;
        }
    }
    Ok(z)
}

/// Data for the identification experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SysIdDataset {
    pub u: Vec<f64>,
    pub y_clean: Vec<f64>,
    pub y_noisy: Vec<f64>,
    /// Filter-bank regressors over the full record.
    pub regressors: DMatrix<f64>,
    pub poles: Vec<f64>,
    /// Samples `..split` are used for identification, `split..` for
    /// validation.
    pub split: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SysIdConfig {
    pub n_id: usize,
    pub n_val: usize,
    pub noise_variance: f64,
    pub seed: u64,
    pub poles: Vec<f64>,
}

impl Default for SysIdConfig {
    fn default() -> Self {
        Self {
            n_id: 500,
            n_val: 200,
            noise_variance: 0.1,
            seed: 0,
            poles: default_poles(),
        }
    }
}

impl SysIdDataset {
    /// Simulates the reference plant on a uniform `[0, 1]` input and adds
    /// zero-mean Gaussian noise of the configured variance.
    pub fn generate(cfg: &SysIdConfig) -> Result<Self> {
        Self::generate_with(&TransferFunction::reference_plant(), cfg)
    }

    pub fn generate_with(tf: &TransferFunction, cfg: &SysIdConfig) -> Result<Self> {
        if cfg.n_id == 0 || cfg.n_val < 2 {
            return Err(Error::invalid("n_id/n_val", "need identification data and at least two validation samples"));
        }
        if !(cfg.noise_variance >= 0.0) {
            return Err(Error::invalid("noise_variance", "must be nonnegative"));
        }
        let len = cfg.n_id + cfg.n_val;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let u: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        let noise = Normal::new(0.0, cfg.noise_variance.sqrt()).map_err(|e| Error::invalid("noise_variance", e.to_string()))?;
        let y_clean = simulate_tf(tf, &u)?;
        let y_noisy = y_clean.iter().map(|y| y + noise.sample(&mut rng)).collect();
        Self::from_parts(u, y_clean, y_noisy, cfg.poles.clone(), cfg.n_id)
    }

    pub fn from_parts(u: Vec<f64>, y_clean: Vec<f64>, y_noisy: Vec<f64>, poles: Vec<f64>, split: usize) -> Result<Self> {
        check_dim("y_clean length", u.len(), y_clean.len())?;
        check_dim("y_noisy length", u.len(), y_noisy.len())?;
        if split == 0 || split >= u.len() {
            return Err(Error::invalid("split", format!("must lie in 1..{}", u.len())));
        }
        let regressors = filter_bank(&u, &poles)?;
        Ok(Self {
            u,
            y_clean,
            y_noisy,
            regressors,
            poles,
            split,
        })
    }

    pub fn identification_regressors(&self) -> DMatrix<f64> {
        self.regressors.rows(0, self.split).into_owned()
    }

    pub fn identification_output(&self) -> &[f64] {
        &self.y_noisy[..self.split]
    }

    pub fn validation_regressors(&self) -> DMatrix<f64> {
        self.regressors.rows(self.split, self.u.len() - self.split).into_owned()
    }

    /// Noise-free validation output.
    pub fn validation_output(&self) -> &[f64] {
        &self.y_clean[self.split..]
    }

    /// Writes `k,u,y_clean,y_noisy`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["k", "u", "y_clean", "y_noisy"])?;
        for k in 0..self.u.len() {
            wtr.write_record([
                k.to_string(),
                format!("{:.17e}", self.u[k]),
                format!("{:.17e}", self.y_clean[k]),
                format!("{:.17e}", self.y_noisy[k]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, poles: Vec<f64>, split: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            k: usize,
            u: f64,
            y_clean: f64,
            y_noisy: f64,
        }
        let mut rdr = csv::Reader::from_reader(r);
        let (mut u, mut yc, mut yn) = (Vec::new(), Vec::new(), Vec::new());
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row?;
            if row.k != i {
                return Err(Error::DegenerateData(format!("row {i} has sample index {}", row.k)));
            }
            u.push(row.u);
            yc.push(row.y_clean);
            yn.push(row.y_noisy);
        }
        Self::from_parts(u, yc, yn, poles, split)
    }
}

/// `min Delta (+ ridge/2 ||(theta, Delta)||^2)` over `(theta, Delta)`
/// subject to `-Delta <= Z_k theta - y_k <= Delta`.
///
/// Rows `0..N` hold `Z_k theta - Delta <= y_k`, rows `N..2N` hold
/// `-Z_k theta - Delta <= -y_k`. With `ridge = 0` the objective is linear.
pub fn build_linf_lp(z: &DMatrix<f64>, y: &[f64], ridge: f64) -> Result<Problem> {
    check_dim("output length", z.nrows(), y.len())?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid("ridge", "must be nonnegative"));
    }
    let (n, p) = (z.nrows(), z.ncols());
    let mut c = DMatrix::zeros(2 * n, p + 1);
    let mut d = DVector::zeros(2 * n);
    for k in 0..n {
        for i in 0..p {
            c[(k, i)] = z[(k, i)];
            c[(n + k, i)] = -z[(k, i)];
        }
        c[(k, p)] = -1.0;
        c[(n + k, p)] = -1.0;
        d[k] = y[k];
        d[n + k] = -y[k];
    }
    let cs = ConstraintSet::new(c, d)?;
    let mut cost = DVector::zeros(p + 1);
    cost[p] = 1.0;
    if ridge > 0.0 {
        let h = DMatrix::identity(p + 1, p + 1) * ridge;
        Problem::quadratic(QuadraticForm::new(h, cost)?, cs)
    } else {
        Problem::linear(cost, cs)
    }
}

/// `100 (1 - ||y - y_hat|| / ||y - mean(y)||)`.
pub fn fit_index(y_val: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_dim("fit prediction length", y_val.len(), y_hat.len())?;
    if y_val.len() < 2 {
        return Err(Error::invalid("y_val", "need at least two samples"));
    }
    let mean = y_val.iter().sum::<f64>() / y_val.len() as f64;
    let num: f64 = y_val.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = y_val.iter().map(|a| (a - mean).powi(2)).sum();
    if den == 0.0 {
        return Err(Error::DegenerateData("validation output is constant".into()));
    }
    Ok(100.0 * (1.0 - (num / den).sqrt()))
}
