use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not symmetric positive-definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension {0} is not supported here")]
    UnsupportedDimension(usize),

    /// Minimal-image jump vectors are only valid below half the period.
    #[error("realized radius {radius} at point {index} is not below 1/2")]
    RadiusTooLarge { index: usize, radius: f64 },

    #[error("invariant measure is not unique: {0} closed classes")]
    MultipleClosedClasses(usize),

    #[error("power iteration stopped after {iterations} iterations with residual {residual:e}")]
    MaxIterExceeded { iterations: usize, residual: f64 },

    #[error("problem size {pairs} exceeds the exact solver limit {limit}")]
    SizeLimit { pairs: usize, limit: usize },

    #[error("did not converge: {0}")]
    NotConverged(String),

    #[error("series diverges: {0}")]
    Divergent(String),

    #[error("non-positive value: {0}")]
    NonPositive(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
