use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use piflow::{FlowKind, Method};
use piflow_cli::commands;
use piflow_cli::config::{Experiment, ExperimentConfig, Format, GainSettings};
use piflow_cli::CliError;

/// PI and primal-dual gradient flows for inequality-constrained convex
/// problems.
#[derive(Debug, Parser)]
#[command(name = "piflow", version)]
struct Cli {
    /// JSON experiment config; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Random strongly convex QPs, PDGD against PI over many seeds.
    QpBench(Common),
    /// l-infinity identification of the reference plant from noisy data.
    Sysid(SysIdArgs),
    /// Eigenvalues of the scalar example's linear modes.
    ScalarModes(ScalarArgs),
    /// Spectral bounds and the exponential rate bound of a QP.
    Rate(RateArgs),
    /// One flow on one problem.
    Solve(SolveArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum IntegratorArg {
    Rk45,
    Rk23,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FlowArg {
    Pdgd,
    Pi,
}

#[derive(Debug, Clone)]
struct SeedList(Vec<u64>);

/// Seeds as `7`, `1,4,9` or a half-open range `0..20`.
fn parse_seeds(s: &str) -> Result<SeedList, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
        return Ok(SeedList((a..b).collect()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|e| format!("{e}")))
        .collect::<Result<_, _>>()
        .map(SeedList)
}

#[derive(Debug, Args)]
struct Common {
    /// Single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list `1,4,9` or range `0..20`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedList>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Penalty parameter; chosen per problem when omitted.
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    ki: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    kp: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    t_final: Option<f64>,
    #[arg(long, value_enum)]
    integrator: Option<IntegratorArg>,
    #[arg(long, allow_negative_numbers = true)]
    rel_tol: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    abs_tol: Option<f64>,
    /// Stop once the KKT residual falls to this value.
    #[arg(long, allow_negative_numbers = true)]
    kkt_stop: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Keep x and lambda in JSON traces.
    #[arg(long)]
    snapshots: bool,
}

#[derive(Debug, Args)]
struct SysIdArgs {
    #[command(flatten)]
    common: Common,
    /// Quadratic regularization of the LP variables.
    #[arg(long, allow_negative_numbers = true)]
    ridge: Option<f64>,
    #[arg(long)]
    n_id: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    noise_variance: Option<f64>,
}

#[derive(Debug, Args)]
struct ScalarArgs {
    #[command(flatten)]
    common: Common,
    /// Curvature of the scalar objective.
    #[arg(long, allow_negative_numbers = true)]
    w: Option<f64>,
}

#[derive(Debug, Args)]
struct RateArgs {
    #[command(flatten)]
    common: Common,
    /// JSON problem file; a random QP is used otherwise.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Also integrate the PI flow and fit its decay slope.
    #[arg(long)]
    simulate: bool,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long, value_enum)]
    flow: Option<FlowArg>,
}

impl Common {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.0.clone();
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(m) = self.m {
            cfg.m = m;
        }
        cfg.gains.overlay(&GainSettings {
            rho: self.rho,
            eta: self.eta,
            k_i: self.ki,
            k_p: self.kp,
            integrator: self.integrator.map(|i| match i {
                IntegratorArg::Rk45 => Method::Rk45,
                IntegratorArg::Rk23 => Method::Rk23,
            }),
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            t_final: self.t_final,
            kkt_stop_tol: self.kkt_stop,
        });
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        cfg.snapshots |= self.snapshots;
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let experiment = match cli.cmd {
        Cmd::QpBench(_) => Experiment::QpBench,
        Cmd::Sysid(_) => Experiment::Sysid,
        Cmd::ScalarModes(_) => Experiment::ScalarModes,
        Cmd::Rate(_) => Experiment::RateAnalysis,
        Cmd::Solve(_) => Experiment::SingleSolve,
    };
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig {
            experiment,
            ..ExperimentConfig::default()
        },
    };
    if cfg.experiment != experiment {
        return Err(CliError::config(format!(
            "config file describes {:?}, not {:?}",
            cfg.experiment, experiment
        )));
    }
    match &cli.cmd {
        Cmd::QpBench(c) => c.apply(&mut cfg),
        Cmd::Sysid(a) => {
            a.common.apply(&mut cfg);
            if let Some(r) = a.ridge {
                cfg.ridge = r;
            }
            if let Some(v) = a.n_id {
                cfg.n_id = v;
            }
            if let Some(v) = a.n_val {
                cfg.n_val = v;
            }
            if let Some(v) = a.noise_variance {
                cfg.noise_variance = v;
            }
        }
        Cmd::ScalarModes(a) => {
            a.common.apply(&mut cfg);
            if let Some(w) = a.w {
                cfg.w = w;
            }
        }
        Cmd::Rate(a) => {
            a.common.apply(&mut cfg);
            if a.problem.is_some() {
                cfg.problem = a.problem.clone();
            }
            cfg.simulate |= a.simulate;
        }
        Cmd::Solve(a) => {
            a.common.apply(&mut cfg);
            if a.problem.is_some() {
                cfg.problem = a.problem.clone();
            }
            if let Some(f) = a.flow {
                cfg.flow = match f {
                    FlowArg::Pdgd => FlowKind::Pdgd,
                    FlowArg::Pi => FlowKind::Pi,
                };
            }
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = build_config(&cli).and_then(|cfg| commands::dispatch(&cfg));
    match result {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
