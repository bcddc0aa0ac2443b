//! Seeded experiment drivers: random-QP sweeps, the identification LP and
//! rate studies. Seeds fan out through [`crate::par`].

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, gram_extremes, RateReport, SpectralBounds, RANK_TOL};
use crate::dynamics::FlowKind;
use crate::error::{Error, Result};
use crate::integrator::{run, RunOptions, RunResult, StopReason};
use crate::oracle::{active_set_qp, polish_qp, OracleSolution};
use crate::par;
use crate::problems::{build_linf_lp, fit_index, random_qp, SysIdConfig, SysIdDataset};
use crate::types::{ConstraintSet, GainConfig, Method, Problem, Trace};

/// Largest constraint count for which references come from full active-set
/// enumeration; above it the PI endpoint is polished instead.
pub const ENUM_REFERENCE_MAX_M: usize = 12;

/// Penalty parameter used when none is given.
///
/// With `k_p > 0` this is `min(1, 0.9 / c_hi)`, inside the region where the
/// rate bound applies. With `k_p <= 0` the bound does not apply and the PI
/// flow needs `rho > -k_p` to stay stable in the active mode, so `1` is used.
pub fn default_rho(gains: &GainConfig, cs: &ConstraintSet) -> f64 {
    if gains.k_p > 0.0 {
        analysis::default_rho(cs)
    } else {
        1.0
    }
}

/// Exact or polished optimum for a quadratic problem.
pub fn reference_solution(problem: &Problem, hint: Option<(&DVector<f64>, &DVector<f64>)>) -> Result<OracleSolution> {
    if problem.m() <= ENUM_REFERENCE_MAX_M {
        return active_set_qp(problem, ENUM_REFERENCE_MAX_M);
    }
    match hint {
        Some((x, l)) => polish_qp(problem, x, l),
        None => Err(Error::invalid("hint", "large problems need an approximate point to polish")),
    }
}

/// One flow run in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub flow: FlowKind,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub wall_time: f64,
    pub final_kkt: f64,
    pub final_violation: f64,
    pub final_dist: Option<f64>,
    pub stop_reason: StopReason,
}

impl RunRecord {
    fn new(seed: u64, flow: FlowKind, r: &RunResult) -> Self {
        let last = r.trace.last().expect("trace has the initial sample");
        Self {
            seed,
            flow,
            accepted_steps: r.trace.accepted_steps,
            rejected_steps: r.trace.rejected_steps,
            wall_time: r.trace.wall_time,
            final_kkt: last.kkt_residual,
            final_violation: last.constraint_violation,
            final_dist: last.dist_to_opt,
            stop_reason: r.stop_reason,
        }
    }
}

/// Mean, sample standard deviation and worst case of `N` (accepted steps)
/// and `T` (wall time) for one flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub flow: FlowKind,
    pub runs: usize,
    pub n_mean: f64,
    pub n_std: f64,
    pub n_worst: f64,
    pub t_mean: f64,
    pub t_std: f64,
    pub t_worst: f64,
}

fn mean_std_max(v: &[f64]) -> (f64, f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    let worst = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    /// Iteration counts are accepted integrator steps.
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<FlowStats>,
}

impl BenchSummary {
    /// Sorts records by `(seed, flow)` and computes per-flow aggregates.
    pub fn from_records(mut records: Vec<RunRecord>) -> Self {
        records.sort_by(|a, b| (a.seed, a.flow).cmp(&(b.seed, b.flow)));
        let aggregates = Self::aggregate(&records);
        Self { records, aggregates }
    }

    pub fn aggregate(records: &[RunRecord]) -> Vec<FlowStats> {
        [FlowKind::Pdgd, FlowKind::Pi]
            .into_iter()
            .filter_map(|flow| {
                let rows: Vec<&RunRecord> = records.iter().filter(|r| r.flow == flow).collect();
                if rows.is_empty() {
                    return None;
                }
                let n: Vec<f64> = rows.iter().map(|r| r.accepted_steps as f64).collect();
                let t: Vec<f64> = rows.iter().map(|r| r.wall_time).collect();
                let (n_mean, n_std, n_worst) = mean_std_max(&n);
                let (t_mean, t_std, t_worst) = mean_std_max(&t);
                Some(FlowStats {
                    flow,
                    runs: rows.len(),
                    n_mean,
                    n_std,
                    n_worst,
                    t_mean,
                    t_std,
                    t_worst,
                })
            })
            .collect()
    }

    pub fn stats(&self, flow: FlowKind) -> Option<&FlowStats> {
        self.aggregates.iter().find(|s| s.flow == flow)
    }

    /// Records of both flows paired by seed.
    pub fn paired(&self) -> Vec<(&RunRecord, &RunRecord)> {
        self.records
            .iter()
            .filter(|r| r.flow == FlowKind::Pdgd)
            .filter_map(|a| {
                self.records
                    .iter()
                    .find(|b| b.flow == FlowKind::Pi && b.seed == a.seed)
                    .map(|b| (a, b))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpBenchConfig {
    pub n: usize,
    pub m: usize,
    pub seeds: Vec<u64>,
    pub gains: GainConfig,
    /// `None` selects [`default_rho`] per problem.
    pub rho: Option<f64>,
    /// Keep `x`/`lambda` in the returned traces.
    pub keep_snapshots: bool,
}

impl Default for QpBenchConfig {
    fn default() -> Self {
        Self {
            n: 50,
            m: 45,
            seeds: (0..100).collect(),
            gains: GainConfig::default(),
            rho: None,
            keep_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRun {
    pub seed: u64,
    pub flow: FlowKind,
    pub rho: f64,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpBenchOutput {
    pub summary: BenchSummary,
    pub runs: Vec<FlowRun>,
    /// Seeds that were skipped, with the reason.
    pub skipped: Vec<(u64, String)>,
}

/// Fills `dist_to_opt` from stored snapshots and optionally drops them.
fn attach_distances(trace: &mut Trace, x_star: Option<&DVector<f64>>, keep: bool) {
    for s in &mut trace.samples {
        if let (Some(xs), Some(x)) = (x_star, s.x.as_ref()) {
            let d2: f64 = x.iter().zip(xs.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            s.dist_to_opt = Some(d2.sqrt());
        }
        if !keep {
            s.x = None;
            s.lambda = None;
        }
    }
}

type SeedOutcome = std::result::Result<Vec<(RunRecord, FlowRun)>, (u64, String)>;

fn qp_seed(cfg: &QpBenchConfig, seed: u64) -> Result<SeedOutcome> {
    let problem = random_qp(cfg.n, cfg.m, seed)?;
    let (c_lo, c_hi) = gram_extremes(problem.constraints());
    if c_lo < RANK_TOL * c_hi {
        let msg = format!("C is rank deficient (lambda_min(CC^T) = {c_lo:.3e})");
        warn!("seed {seed}: {msg}, skipping");
        return Ok(Err((seed, msg)));
    }
    let rho = cfg.rho.unwrap_or_else(|| default_rho(&cfg.gains, problem.constraints()));
    let gains = GainConfig { rho, ..cfg.gains };
    let opts = RunOptions {
        snapshots: true,
        ..RunOptions::default()
    };
    let x0 = DVector::zeros(problem.n());
    let l0 = DVector::zeros(problem.m());
    let mut results = Vec::with_capacity(2);
    for flow in [FlowKind::Pdgd, FlowKind::Pi] {
        results.push((flow, run(&problem, &gains, flow, &x0, &l0, &opts)?));
    }
    // polish from whichever endpoint is closer to optimal
    let hint = results
        .iter()
        .min_by(|a, b| {
            let ka = a.1.trace.last().map_or(f64::INFINITY, |s| s.kkt_residual);
            let kb = b.1.trace.last().map_or(f64::INFINITY, |s| s.kkt_residual);
            ka.total_cmp(&kb)
        })
        .map(|(_, r)| (&r.final_state.x, &r.final_state.lambda));
    let reference = match reference_solution(&problem, hint) {
        Ok(s) => Some(s.x_star),
        Err(e) => {
            warn!("seed {seed}: no reference optimum ({e}); distances omitted");
            None
        }
    };
    Ok(Ok(results
        .into_iter()
        .map(|(flow, mut r)| {
            attach_distances(&mut r.trace, reference.as_ref(), cfg.keep_snapshots);
            let rec = RunRecord::new(seed, flow, &r);
            (
                rec,
                FlowRun {
                    seed,
                    flow,
                    rho,
                    trace: r.trace,
                },
            )
        })
        .collect()))
}

/// Runs PDGD and PI from the origin on `random_qp(n, m, seed)` for every
/// seed.
pub fn qp_bench(cfg: &QpBenchConfig) -> Result<QpBenchOutput> {
    if cfg.seeds.is_empty() {
        return Err(Error::invalid("seeds", "at least one seed is required"));
    }
    cfg.gains.validate()?;
    let outcomes = par::map(&cfg.seeds, |&seed| qp_seed(cfg, seed));
    let mut records = Vec::new();
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for outcome in outcomes {
        match outcome? {
            Ok(pairs) => {
                for (rec, fr) in pairs {
                    records.push(rec);
                    runs.push(fr);
                }
            }
            Err(skip) => skipped.push(skip),
        }
    }
    runs.sort_by(|a, b| (a.seed, a.flow).cmp(&(b.seed, b.flow)));
    Ok(QpBenchOutput {
        summary: BenchSummary::from_records(records),
        runs,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SysIdBenchConfig {
    pub data: SysIdConfig,
    pub gains: GainConfig,
    pub rho: Option<f64>,
    pub ridge: f64,
    /// When PI has not reached PDGD's final KKT residual by `t_final`, it is
    /// continued for up to this multiple of `t_final`.
    pub catch_up_factor: f64,
}

impl Default for SysIdBenchConfig {
    fn default() -> Self {
        Self {
            data: SysIdConfig::default(),
            gains: GainConfig {
                k_i: 1.0,
                eta: 1.0,
                k_p: -0.5,
                integrator: Method::Rk23,
                t_final: 1000.0,
                ..GainConfig::default()
            },
            rho: None,
            ridge: 0.0,
            catch_up_factor: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SysIdFlowReport {
    pub flow: FlowKind,
    pub record: RunRecord,
    pub theta: Vec<f64>,
    pub delta: f64,
    pub fit: f64,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SysIdReport {
    pub rho: f64,
    pub flows: Vec<SysIdFlowReport>,
    pub summary: BenchSummary,
    /// PDGD's KKT residual at `t_final`.
    pub target_kkt: f64,
    /// First accepted step at which PDGD's residual is at or below the
    /// target.
    pub pdgd_steps_to_target: usize,
    /// Accepted steps PI needed to reach the target, counting a
    /// continuation past `t_final` when necessary.
    pub pi_steps_to_target: Option<usize>,
}

impl SysIdReport {
    pub fn flow(&self, flow: FlowKind) -> &SysIdFlowReport {
        self.flows.iter().find(|f| f.flow == flow).expect("both flows are run")
    }
}

/// Identification experiment: data from the reference plant, l-infinity LP
/// over the filter-bank regressors, both flows, FIT on validation data.
pub fn sysid(cfg: &SysIdBenchConfig) -> Result<SysIdReport> {
    cfg.gains.validate()?;
    let ds = SysIdDataset::generate(&cfg.data)?;
    let y_id = ds.identification_output();
    if y_id.iter().all(|&v| v == y_id[0]) {
        return Err(Error::DegenerateData("identification output is constant".into()));
    }
    let problem = build_linf_lp(&ds.identification_regressors(), y_id, cfg.ridge)?;
    let rho = cfg.rho.unwrap_or_else(|| default_rho(&cfg.gains, problem.constraints()));
    let gains = GainConfig { rho, ..cfg.gains };
    let p = problem.n() - 1;
    let x0 = DVector::zeros(problem.n());
    let l0 = DVector::zeros(problem.m());
    let z_val = ds.validation_regressors();
    let y_val = ds.validation_output();

    let flows = [FlowKind::Pdgd, FlowKind::Pi];
    let runs = par::map(&flows, |&flow| run(&problem, &gains, flow, &x0, &l0, &RunOptions::default()));
    let mut reports = Vec::with_capacity(2);
    for (flow, r) in flows.into_iter().zip(runs) {
        let r = r?;
        let theta: Vec<f64> = r.final_state.x.iter().take(p).copied().collect();
        let y_hat = &z_val * DVector::from_column_slice(&theta);
        let fit = fit_index(y_val, y_hat.as_slice())?;
        reports.push((flow, r, theta, fit));
    }

    let pdgd = &reports[0].1;
    let target_kkt = pdgd.trace.last().map_or(f64::INFINITY, |s| s.kkt_residual);
    let pdgd_steps_to_target = pdgd.trace.first_step_reaching(target_kkt).unwrap_or(pdgd.trace.accepted_steps);
    let pi = &reports[1].1;
    let pi_steps_to_target = match pi.trace.first_step_reaching(target_kkt) {
        Some(s) => Some(s),
        None if cfg.catch_up_factor > 0.0 => {
            let more = GainConfig {
                t_final: cfg.catch_up_factor * gains.t_final,
                kkt_stop_tol: Some(target_kkt),
                ..gains
            };
            let cont = run(
                &problem,
                &more,
                FlowKind::Pi,
                &pi.final_state.x,
                &pi.final_state.lambda,
                &RunOptions {
                    stride: usize::MAX,
                    ..RunOptions::default()
                },
            )?;
            (cont.stop_reason == StopReason::KktToleranceMet).then(|| pi.trace.accepted_steps + cont.trace.accepted_steps)
        }
        None => None,
    };

    let mut records = Vec::new();
    let flows = reports
        .into_iter()
        .map(|(flow, r, theta, fit)| {
            let record = RunRecord::new(cfg.data.seed, flow, &r);
            records.push(record.clone());
            SysIdFlowReport {
                flow,
                record,
                delta: r.final_state.x[p],
                theta,
                fit,
                trace: r.trace,
            }
        })
        .collect();
    Ok(SysIdReport {
        rho,
        flows,
        summary: BenchSummary::from_records(records),
        target_kkt,
        pdgd_steps_to_target,
        pi_steps_to_target,
    })
}

/// Rate bound next to the decay actually observed on a PI run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub bounds: SpectralBounds,
    pub report: RateReport,
    /// Least-squares slope of `ln ||z(t) - z*||` over the second half of the
    /// run.
    pub empirical_slope: Option<f64>,
}

/// Analyzes `problem` under `gains` and, when `simulate` is set, integrates
/// the PI flow from the origin to measure the decay slope.
pub fn rate_study(problem: &Problem, gains: &GainConfig, simulate: bool) -> Result<RateStudy> {
    let (bounds, report) = analysis::analyze(problem, gains)?;
    let empirical_slope = if simulate {
        let x0 = DVector::zeros(problem.n());
        let l0 = DVector::zeros(problem.m());
        let r = run(
            problem,
            gains,
            FlowKind::Pi,
            &x0,
            &l0,
            &RunOptions {
                snapshots: true,
                ..RunOptions::default()
            },
        )?;
        let reference = reference_solution(problem, Some((&r.final_state.x, &r.final_state.lambda)))?;
        let pts: Vec<(f64, f64)> = r
            .trace
            .samples
            .iter()
            .map(|s| {
                let x = s.x.as_deref().unwrap_or_default();
                let l = s.lambda.as_deref().unwrap_or_default();
                let d2: f64 = x
                    .iter()
                    .zip(reference.x_star.iter())
                    .chain(l.iter().zip(reference.lambda_star.iter()))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                (s.t, d2.sqrt())
            })
            .collect();
        analysis::log_decay_slope(&pts)
    } else {
        None
    };
    Ok(RateStudy {
        bounds,
        report,
        empirical_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let mk = |seed, flow, n: usize, t: f64| RunRecord {
            seed,
            flow,
            accepted_steps: n,
            rejected_steps: 0,
            wall_time: t,
            final_kkt: 0.0,
            final_violation: 0.0,
            final_dist: None,
            stop_reason: StopReason::HorizonReached,
        };
        let s = BenchSummary::from_records(vec![
            mk(2, FlowKind::Pi, 30, 0.3),
            mk(1, FlowKind::Pdgd, 10, 0.1),
            mk(1, FlowKind::Pi, 20, 0.2),
            mk(2, FlowKind::Pdgd, 40, 0.4),
        ]);
        assert_eq!(s.records[0].seed, 1);
        assert_eq!(s.records[0].flow, FlowKind::Pdgd);
        let pd = s.stats(FlowKind::Pdgd).unwrap();
        assert_eq!(pd.n_mean, 25.0);
        assert!((pd.n_std - 450f64.sqrt()).abs() < 1e-12);
        assert_eq!(pd.n_worst, 40.0);
        assert_eq!(s.paired().len(), 2);
    }

    #[test]
    fn default_rho_depends_on_gain_sign() {
        let p = random_qp(4, 3, 0).unwrap();
        let pos = GainConfig {
            k_p: 0.2,
            ..GainConfig::default()
        };
        assert!(default_rho(&pos, p.constraints()) < 1.0 / gram_extremes(p.constraints()).1);
        assert_eq!(default_rho(&GainConfig::default(), p.constraints()), 1.0);
    }

    #[test]
    fn tiny_bench_is_structural() {
        let cfg = QpBenchConfig {
            n: 4,
            m: 3,
            seeds: vec![7],
            ..QpBenchConfig::default()
        };
        let out = qp_bench(&cfg).unwrap();
        assert_eq!(out.summary.records.len(), 2);
        assert_eq!(out.runs.len(), 2);
        for r in &out.runs {
            assert!(r.trace.samples.iter().all(|s| s.dist_to_opt.is_some() && s.x.is_none()));
        }
    }

    #[test]
    fn empty_seed_list_rejected() {
        let cfg = QpBenchConfig {
            seeds: vec![],
            ..QpBenchConfig::default()
        };
        assert!(qp_bench(&cfg).is_err());
    }
}
