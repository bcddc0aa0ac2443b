//! Experiment configuration as read from JSON and overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use piflow::problems::SysIdConfig;
use piflow::{GainConfig, Method};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    #[default]
    QpBench,
    Sysid,
    ScalarModes,
    RateAnalysis,
    SingleSolve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Gain settings where every field may be left unset; unset fields take the
/// experiment's defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainSettings {
    pub rho: Option<f64>,
    pub eta: Option<f64>,
    pub k_i: Option<f64>,
    pub k_p: Option<f64>,
    pub integrator: Option<Method>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub t_final: Option<f64>,
    pub kkt_stop_tol: Option<f64>,
}

impl GainSettings {
    /// Fields set in `other` replace those in `self`.
    pub fn overlay(&mut self, other: &GainSettings) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(rho, eta, k_i, k_p, integrator, rel_tol, abs_tol, t_final, kkt_stop_tol);
    }

    /// Fills unset fields from `base`. Commands that pick `rho` per problem
    /// read `self.rho` directly instead.
    pub fn resolve(&self, base: GainConfig) -> GainConfig {
        GainConfig {
            rho: self.rho.unwrap_or(base.rho),
            eta: self.eta.unwrap_or(base.eta),
            k_i: self.k_i.unwrap_or(base.k_i),
            k_p: self.k_p.unwrap_or(base.k_p),
            integrator: self.integrator.unwrap_or(base.integrator),
            rel_tol: self.rel_tol.unwrap_or(base.rel_tol),
            abs_tol: self.abs_tol.unwrap_or(base.abs_tol),
            t_final: self.t_final.unwrap_or(base.t_final),
            kkt_stop_tol: self.kkt_stop_tol.or(base.kkt_stop_tol),
        }
    }
}

/// Everything a command needs. Fields irrelevant to the chosen experiment
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seeds: Vec<u64>,
    pub gains: GainSettings,
    pub n: usize,
    pub m: usize,
    /// Slack regularization for the identification LP.
    pub ridge: f64,
    pub n_id: usize,
    pub n_val: usize,
    pub noise_variance: f64,
    /// Curvature of the scalar example.
    pub w: f64,
    /// Integrate the PI flow during rate analysis.
    pub simulate: bool,
    /// JSON problem file for `solve` and `rate`; random QP when absent.
    pub problem: Option<PathBuf>,
    pub flow: piflow::FlowKind,
    pub out: PathBuf,
    pub format: Format,
    /// Store `x` and `lambda` in JSON traces.
    pub snapshots: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sysid = SysIdConfig::default();
        Self {
            experiment: Experiment::QpBench,
            seeds: (0..100).collect(),
            gains: GainSettings::default(),
            n: 50,
            m: 45,
            ridge: 0.0,
            n_id: sysid.n_id,
            n_val: sysid.n_val,
            noise_variance: sysid.noise_variance,
            w: 1.0,
            simulate: false,
            problem: None,
            flow: piflow::FlowKind::Pi,
            out: PathBuf::from("out"),
            format: Format::Csv,
            snapshots: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Gains with the defaults of the configured experiment. The
    /// identification experiment uses `k_p = -0.5`, rk23 and a horizon of
    /// 1000; everything else uses the random-QP defaults.
    pub fn base_gains(&self) -> GainConfig {
        match self.experiment {
            Experiment::Sysid => piflow::bench::SysIdBenchConfig::default().gains,
            _ => GainConfig::default(),
        }
    }

    pub fn resolved_gains(&self) -> GainConfig {
        self.gains.resolve(self.base_gains())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let needs_seeds = matches!(self.experiment, Experiment::QpBench | Experiment::Sysid)
            || (self.problem.is_none() && matches!(self.experiment, Experiment::RateAnalysis | Experiment::SingleSolve));
        if needs_seeds && self.seeds.is_empty() {
            return Err(CliError::config("at least one seed is required"));
        }
        if self.problem.is_none() && (self.n == 0 || self.m == 0) {
            return Err(CliError::config("n and m must be at least one"));
        }
        if let Some(rho) = self.gains.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(CliError::config(format!("rho must be positive, got {rho}")));
            }
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(CliError::config(format!("ridge must be nonnegative, got {}", self.ridge)));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(CliError::config("noise variance must be nonnegative"));
        }
        if self.experiment == Experiment::ScalarModes && !(self.w > 0.0) {
            return Err(CliError::config(format!("w must be positive, got {}", self.w)));
        }
        // rho is checked above because it may legitimately be unset
        GainConfig {
            rho: 1.0,
            ..self.resolved_gains()
        }
        .validate()
        .map_err(|e| CliError::config(e.to_string()))
    }
}
