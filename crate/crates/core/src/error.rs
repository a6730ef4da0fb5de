//! Error type shared across the engine.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CrfError>;

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// CSV ingestion failure with the file position that caused it.
    #[error("{path}: line {line}: {message}")]
    Csv {
        path: String,
        line: usize,
        message: String,
    },

    #[error("task mismatch: {0}")]
    TaskMismatch(String),

    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("branch statistics not populated; evaluate them before pruning")]
    StatsNotPopulated,

    #[error("empty dataset")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
