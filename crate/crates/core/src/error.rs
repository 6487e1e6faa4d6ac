use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected} options, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("degenerate vote: every aggregation weight is zero")]
    DegenerateVote,

    #[error("{path}:{line}: {message}")]
    Dataset {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("transport error after {attempts} attempt(s) to {endpoint}: {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        message: String,
    },

    /// Non-retryable rejection reported by the backend (HTTP 4xx).
    #[error("backend rejected request ({status}): {message}")]
    Rejected { status: u16, message: String },

    #[error("mock table miss: no {kind} entry for {key}")]
    MockMiss { kind: &'static str, key: String },

    #[error("backend capability error: {0}")]
    Capability(String),

    #[error("scoring option {option} failed: {source}")]
    OptionScoring {
        option: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that originate in the model backend rather than in
    /// the caller's inputs.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::Transport { .. }
            | Error::Rejected { .. }
            | Error::MockMiss { .. }
            | Error::Capability(_) => true,
            Error::OptionScoring { source, .. } => source.is_backend(),
            _ => false,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
