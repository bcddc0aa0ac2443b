//! Experiment commands behind the `piflow` binary, plus the trace and
//! summary file formats they write.

pub mod commands;
pub mod config;
pub mod io;

use thiserror::Error;

/// Error carrying the process exit code: 1 for numeric failures, 2 for
/// invalid configuration.
#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const NUMERIC: u8 = 1;
    pub const CONFIG: u8 = 2;

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: Self::CONFIG,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: Self::NUMERIC,
            message: message.into(),
        }
    }
}

impl From<piflow::Error> for CliError {
    fn from(e: piflow::Error) -> Self {
        use piflow::Error as E;
        let code = match e {
            E::InvalidParameter { .. } | E::DimensionMismatch { .. } | E::NotQuadratic(_) => Self::CONFIG,
            _ => Self::NUMERIC,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::numeric(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::numeric(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::numeric(e.to_string())
    }
}
