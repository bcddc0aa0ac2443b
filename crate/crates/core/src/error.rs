use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("constraint matrix is rank deficient: lambda_min(CC^T) = {lambda_min:.3e}, lambda_max(CC^T) = {lambda_max:.3e}")]
    RankDeficient { lambda_min: f64, lambda_max: f64 },

    #[error("a quadratic form is required for {0}")]
    NotQuadratic(&'static str),

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("problem is unbounded below")]
    Unbounded,

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure {
        t: f64,
        reason: String,
        state: Vec<f64>,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
