use thiserror::Error;

/// Errors produced anywhere in the sampling pipeline.
#[derive(Debug, Error)]
pub enum GmaError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("weights are off the simplex (sum = {sum}, min = {min})")]
    OffSimplex { sum: f64, min: f64 },

    #[error("degenerate sample bank: {0}")]
    DegenerateBank(String),

    #[error("optimization failed at iteration {iteration}: {reason}")]
    Optimization { iteration: usize, reason: String },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GmaError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(GmaError::DimensionMismatch { expected, got });
    }
    Ok(())
}
