//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The logging policy assigned zero (or negative) probability to a logged
    /// action, so importance weights are undefined.
    #[error("support violation at record {record}: logging propensity {propensity} must be positive")]
    SupportViolation { record: usize, propensity: f64 },

    #[error("singular normal equations; set the l2 penalty above zero")]
    SingularSystem,

    #[error("missing model component: {0}")]
    MissingComponent(&'static str),

    #[error("index out of range in {context}: {index} >= {len}")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        len: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
