use thiserror::Error;

/// Errors raised by model construction, inference and I/O.
#[derive(Debug, Error)]
pub enum CprError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("label {value} at position {index} is not +1 or -1")]
    InvalidLabel { index: usize, value: f64 },

    #[error("covariance is not positive definite after jitter {jitter:e}")]
    IndefiniteCovariance { jitter: f64 },

    #[error("expectation propagation failed: {0}")]
    EpFailure(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{0}")]
    Undefined(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CprError> = std::result::Result<T, E>;
