use thiserror::Error;

/// Errors raised by the model-building and inference routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("row {row}: coordinate out of range ({detail})")]
    CoordinateOutOfRange { row: usize, detail: String },

    #[error("local covariance at location {index} is not positive definite after jitter escalation")]
    NotPositiveDefinite { index: usize },

    #[error("conjugate gradient did not converge: {iters} iterations, relative residual {residual:e}")]
    NonConvergence { iters: usize, residual: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("dense path capped at n = {cap}, got {n}")]
    DenseCapExceeded { n: usize, cap: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
