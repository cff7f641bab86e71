use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("strategy {strategy} cannot be used here: {reason}")]
    Strategy { strategy: &'static str, reason: String },

    #[error("oracle mode incompatible: {0}")]
    Oracle(String),

    #[error("empty admissible interval: {0}")]
    EmptyInterval(String),

    #[error("threshold violated: {0}")]
    Threshold(String),

    #[error("degenerate regression: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("net too large: {members} members exceeds the limit of {limit}")]
    NetTooLarge { members: f64, limit: u64 },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
