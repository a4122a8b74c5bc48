use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("edges contain a directed cycle through `{0}`")]
    Cycle(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("duplicate node `{0}`")]
    DuplicateNode(String),

    #[error("noise variances are both zero; signal extraction weight is undefined")]
    DegenerateNoise,

    #[error("{field} {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("first-order condition is degenerate: |1 - c2| = {margin:e} < 1e-9")]
    DegenerateFoc { margin: f64 },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        last_k: f64,
        last_b: f64,
        trace: Vec<f64>,
    },

    #[error("covariance is not positive semidefinite (minimum eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
