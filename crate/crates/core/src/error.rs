use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate interaction for user {user:?} and item {item:?} at line {line}")]
    Duplicate { user: String, item: String, line: u64 },

    #[error("dataset is empty after {0}")]
    EmptyDataset(&'static str),

    #[error("user {user:?} violates the split protocol: {reason}")]
    ProtocolViolation { user: String, reason: String },

    #[error("cannot sample {needed} negatives for user {user:?}: only {available} candidate items")]
    SamplingInfeasible {
        user: String,
        needed: usize,
        available: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metric is undefined: {0}")]
    UndefinedMetric(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("model produced a non-finite score for user {user}")]
    NonFiniteScore { user: usize },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerics rather than by inputs or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::NonFiniteScore { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
