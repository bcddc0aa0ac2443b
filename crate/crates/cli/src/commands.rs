//! One function per subcommand. Each writes its files under `cfg.out` and
//! returns a printable report.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use piflow::analysis::{compare_scalar_modes, scalar_mode_matrices};
use piflow::bench::{self, BenchSummary, QpBenchConfig, RateStudy, SysIdBenchConfig};
use piflow::oracle::active_set_qp;
use piflow::problems::{random_qp, SysIdConfig, SysIdDataset};
use piflow::{
    kkt_residual, run, ConstraintSet, FlowKind, KktResidual, Problem, QuadraticForm, RunOptions, StopReason,
};

use crate::config::{Experiment, ExperimentConfig};
use crate::io::{write_json, write_summary, write_trace};
use crate::CliError;

/// Dense problem description: quadratic when `h` is present, linear in `b`
/// otherwise. Matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default)]
    pub h: Option<Vec<Vec<f64>>>,
    pub b: Vec<f64>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

fn dense(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::config(format!("{what} must be a non-empty list of equal-length rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn build(&self) -> Result<Problem, CliError> {
        let cs = ConstraintSet::new(dense(&self.c, "c")?, DVector::from_column_slice(&self.d))?;
        let b = DVector::from_column_slice(&self.b);
        Ok(match &self.h {
            Some(h) => Problem::quadratic(QuadraticForm::new(dense(h, "h")?, b)?, cs)?,
            None => Problem::linear(b, cs)?,
        })
    }
}

fn check_experiment(cfg: &ExperimentConfig, expected: Experiment) -> Result<(), CliError> {
    if cfg.experiment != expected {
        return Err(CliError::config(format!(
            "config is for {:?} but the {:?} command was invoked",
            cfg.experiment, expected
        )));
    }
    cfg.validate()
}

fn problem_for(cfg: &ExperimentConfig) -> Result<Problem, CliError> {
    match &cfg.problem {
        Some(path) => ProblemFile::load(path)?.build(),
        None => Ok(random_qp(cfg.n, cfg.m, cfg.seeds[0])?),
    }
}

fn trace_name(seed: u64, flow: FlowKind, ext: &str) -> String {
    format!("trace_seed{seed:04}_{flow}.{ext}")
}

fn numeric_failures(summary: &BenchSummary) -> Vec<String> {
    summary
        .records
        .iter()
        .filter(|r| !r.final_kkt.is_finite() || r.stop_reason == StopReason::StepUnderflow)
        .map(|r| format!("seed {} {}: final KKT {:e}, {:?}", r.seed, r.flow, r.final_kkt, r.stop_reason))
        .collect()
}

fn summary_table(summary: &BenchSummary) -> String {
    let mut s = String::from("N = accepted integrator steps, T = wall time [s]\n");
    let _ = writeln!(
        s,
        "{:<5} {:>5} {:>10} {:>10} {:>8} {:>10} {:>10} {:>10}",
        "flow", "runs", "N mean", "N std", "N worst", "T mean", "T std", "T worst"
    );
    for a in &summary.aggregates {
        let _ = writeln!(
            s,
            "{:<5} {:>5} {:>10.1} {:>10.1} {:>8} {:>10.4} {:>10.4} {:>10.4}",
            a.flow, a.runs, a.n_mean, a.n_std, a.n_worst, a.t_mean, a.t_std, a.t_worst
        );
    }
    s
}

pub fn qp_bench(cfg: &ExperimentConfig) -> Result<String, CliError> {
    check_experiment(cfg, Experiment::QpBench)?;
    let keep = cfg.snapshots && cfg.format == crate::config::Format::Json;
    let out = bench::qp_bench(&QpBenchConfig {
        n: cfg.n,
        m: cfg.m,
        seeds: cfg.seeds.clone(),
        gains: cfg.resolved_gains(),
        rho: cfg.gains.rho,
        keep_snapshots: keep,
    })?;
    fs::create_dir_all(&cfg.out)?;
    for r in &out.runs {
        write_trace(&r.trace, cfg.format, &cfg.out.join(trace_name(r.seed, r.flow, cfg.format.extension())))?;
    }
    write_summary(&out.summary, cfg.format, &cfg.out)?;

    let mut report = summary_table(&out.summary);
    let pairs = out.summary.paired();
    let wins = pairs.iter().filter(|(pd, pi)| pi.accepted_steps < pd.accepted_steps).count();
    let _ = writeln!(report, "PI needed fewer steps in {wins} of {} runs", pairs.len());
    for (seed, why) in &out.skipped {
        let _ = writeln!(report, "skipped seed {seed}: {why}");
    }
    let failures = numeric_failures(&out.summary);
    if !failures.is_empty() {
        return Err(CliError::numeric(format!("{report}{}", failures.join("\n"))));
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
struct ModelFlow<'a> {
    flow: FlowKind,
    fit: f64,
    delta: f64,
    accepted_steps: usize,
    wall_time: f64,
    final_kkt: f64,
    theta: &'a [f64],
}

#[derive(Debug, Serialize)]
struct ModelReport<'a> {
    rho: f64,
    target_kkt: f64,
    pdgd_steps_to_target: usize,
    pi_steps_to_target: Option<usize>,
    flows: Vec<ModelFlow<'a>>,
}

pub fn sysid(cfg: &ExperimentConfig) -> Result<String, CliError> {
    check_experiment(cfg, Experiment::Sysid)?;
    let data = SysIdConfig {
        n_id: cfg.n_id,
        n_val: cfg.n_val,
        noise_variance: cfg.noise_variance,
        seed: cfg.seeds[0],
        ..SysIdConfig::default()
    };
    let rep = bench::sysid(&SysIdBenchConfig {
        data: data.clone(),
        gains: cfg.resolved_gains(),
        rho: cfg.gains.rho,
        ridge: cfg.ridge,
        ..SysIdBenchConfig::default()
    })?;
    fs::create_dir_all(&cfg.out)?;
    SysIdDataset::generate(&data)?.write_csv(BufWriter::new(File::create(cfg.out.join("dataset.csv"))?))?;
    for f in &rep.flows {
        write_trace(&f.trace, cfg.format, &cfg.out.join(trace_name(data.seed, f.flow, cfg.format.extension())))?;
    }
    write_summary(&rep.summary, cfg.format, &cfg.out)?;
    let model = ModelReport {
        rho: rep.rho,
        target_kkt: rep.target_kkt,
        pdgd_steps_to_target: rep.pdgd_steps_to_target,
        pi_steps_to_target: rep.pi_steps_to_target,
        flows: rep
            .flows
            .iter()
            .map(|f| ModelFlow {
                flow: f.flow,
                fit: f.fit,
                delta: f.delta,
                accepted_steps: f.record.accepted_steps,
                wall_time: f.record.wall_time,
                final_kkt: f.record.final_kkt,
                theta: &f.theta,
            })
            .collect(),
    };
    write_json(&model, &cfg.out.join("model.json"))?;

    let mut report = summary_table(&rep.summary);
    for f in &rep.flows {
        let _ = writeln!(
            report,
            "{:<5} FIT {:6.2}  Delta {:.6}  final KKT {:.3e}",
            f.flow, f.fit, f.delta, f.record.final_kkt
        );
    }
    let pi = rep.pi_steps_to_target.map_or_else(|| "not reached".to_string(), |s| s.to_string());
    let _ = writeln!(
        report,
        "steps to KKT {:.3e}: PI {pi}, PDGD {} (first touch {})",
        rep.target_kkt,
        rep.flow(FlowKind::Pdgd).record.accepted_steps,
        rep.pdgd_steps_to_target
    );
    let failures = numeric_failures(&rep.summary);
    if !failures.is_empty() {
        return Err(CliError::numeric(format!("{report}{}", failures.join("\n"))));
    }
    Ok(report)
}

fn fmt_matrix(name: &str, a: &nalgebra::Matrix2<f64>) -> String {
    format!(
        "{name} = [[{:+.6}, {:+.6}], [{:+.6}, {:+.6}]]\n",
        a[(0, 0)],
        a[(0, 1)],
        a[(1, 0)],
        a[(1, 1)]
    )
}

/// Scalar example `min w x^2 / 2 s.t. x <= 0`. PDGD is compared with
/// `eta = k_i`.
pub fn scalar_modes(cfg: &ExperimentConfig) -> Result<String, CliError> {
    check_experiment(cfg, Experiment::ScalarModes)?;
    let g = cfg.resolved_gains();
    let (w, rho) = (cfg.w, g.rho);
    let (a1, a2) = scalar_mode_matrices(w, rho, g.k_i, g.k_p);
    let (t1, t2) = scalar_mode_matrices(w, rho, g.k_i, 0.0);
    let cmp = compare_scalar_modes(w, rho, g.k_i, g.k_p);
    let mut s = format!("w = {w}, rho = {rho}, k_i = eta = {}, k_p = {}\n", g.k_i, g.k_p);
    s += &fmt_matrix("A1 ", &a1);
    s += &fmt_matrix("A2 ", &a2);
    s += &fmt_matrix("A1~", &t1);
    s += &fmt_matrix("A2~", &t2);
    for (name, e) in [("PI  ", &cmp.pi), ("PDGD", &cmp.pdgd)] {
        let _ = writeln!(
            s,
            "{name} mode 1: {:.6} , {:.6}  abscissa {:.6}  mode 2: {:.6} , {:.6}",
            e.mode1[0], e.mode1[1], e.abscissa1, e.mode2[0], e.mode2[1]
        );
    }
    let _ = writeln!(
        s,
        "verdict: {}; PDGD best abscissa {:.6}; PI beats it: {}",
        cmp.verdict, cmp.pdgd_best_abscissa, cmp.beats_pdgd_best
    );
    fs::create_dir_all(&cfg.out)?;
    write_json(&cmp, &cfg.out.join("scalar_modes.json"))?;
    Ok(s)
}

pub fn rate(cfg: &ExperimentConfig) -> Result<String, CliError> {
    check_experiment(cfg, Experiment::RateAnalysis)?;
    let problem = problem_for(cfg)?;
    if problem.quadratic_form().is_none() {
        return Err(CliError::config("rate analysis needs a quadratic problem"));
    }
    let mut gains = cfg.resolved_gains();
    gains.rho = cfg.gains.rho.unwrap_or_else(|| bench::default_rho(&gains, problem.constraints()));
    let study: RateStudy = bench::rate_study(&problem, &gains, cfg.simulate)?;
    let b = &study.bounds;
    let mut s = format!(
        "g_lo = {:.6e}  g_hi = {:.6e}  c_lo = {:.6e}  c_hi = {:.6e}  rho = {:.6e}\n",
        b.g_lo, b.g_hi, b.c_lo, b.c_hi, gains.rho
    );
    let _ = writeln!(s, "mu = {:.6e}  hypotheses hold: {}", study.report.mu, study.report.hypotheses_ok);
    for v in &study.report.violations {
        let _ = writeln!(s, "  violated: {v}");
    }
    if let Some(slope) = study.empirical_slope {
        let _ = writeln!(s, "empirical decay slope {slope:.6e}  vs  -mu/2 = {:.6e}", -0.5 * study.report.mu);
    }
    fs::create_dir_all(&cfg.out)?;
    write_json(&study, &cfg.out.join("rate.json"))?;
    Ok(s)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Solution {
    pub flow: FlowKind,
    pub rho: f64,
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub t: f64,
    pub kkt: KktResidual,
    pub stop_reason: StopReason,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

pub fn solve(cfg: &ExperimentConfig) -> Result<String, CliError> {
    check_experiment(cfg, Experiment::SingleSolve)?;
    let problem = problem_for(cfg)?;
    let mut gains = cfg.resolved_gains();
    gains.rho = cfg.gains.rho.unwrap_or_else(|| bench::default_rho(&gains, problem.constraints()));
    let mut opts = RunOptions {
        snapshots: cfg.snapshots,
        ..RunOptions::default()
    };
    if problem.quadratic_form().is_some() && problem.m() <= bench::ENUM_REFERENCE_MAX_M {
        if let Ok(star) = active_set_qp(&problem, bench::ENUM_REFERENCE_MAX_M) {
            opts.reference = Some(star.x_star);
        }
    }
    let x0 = DVector::zeros(problem.n());
    let l0 = DVector::zeros(problem.m());
    let r = run(&problem, &gains, cfg.flow, &x0, &l0, &opts)?;
    let kkt = kkt_residual(&problem, &r.final_state.x, &r.final_state.lambda)?;
    fs::create_dir_all(&cfg.out)?;
    write_trace(&r.trace, cfg.format, &cfg.out.join(format!("trace_{}.{}", cfg.flow, cfg.format.extension())))?;
    let sol = Solution {
        flow: cfg.flow,
        rho: gains.rho,
        x: r.final_state.x.iter().copied().collect(),
        lambda: r.final_state.lambda.iter().copied().collect(),
        t: r.final_state.t,
        kkt,
        stop_reason: r.stop_reason,
        accepted_steps: r.trace.accepted_steps,
        rejected_steps: r.trace.rejected_steps,
    };
    write_json(&sol, &cfg.out.join("solution.json"))?;
    let report = format!(
        "{} stopped at t = {:.4} ({:?}) after {} accepted / {} rejected steps, KKT {:.3e}\n",
        cfg.flow, sol.t, sol.stop_reason, sol.accepted_steps, sol.rejected_steps, kkt.total
    );
    if !kkt.total.is_finite() || r.stop_reason == StopReason::StepUnderflow {
        return Err(CliError::numeric(report));
    }
    Ok(report)
}

pub fn dispatch(cfg: &ExperimentConfig) -> Result<String, CliError> {
    match cfg.experiment {
        Experiment::QpBench => qp_bench(cfg),
        Experiment::Sysid => sysid(cfg),
        Experiment::ScalarModes => scalar_modes(cfg),
        Experiment::RateAnalysis => rate(cfg),
        Experiment::SingleSolve => solve(cfg),
    }
}
