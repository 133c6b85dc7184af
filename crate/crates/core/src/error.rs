use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {index}: {what}")]
    NonFinite { index: usize, what: &'static str },

    #[error("IDX format error at byte offset {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("unsupported dimension {0} (brute-force oracle handles n <= 3)")]
    UnsupportedDimension(usize),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver aborted at iteration {iteration}: {reason}")]
    Aborted { iteration: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that stem from a bad experiment description rather
    /// than a failure while running it.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
