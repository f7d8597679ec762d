use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    /// A private record reached a stage that must only see public data.
    #[error("privacy violation: {0}")]
    PrivacyViolation(String),

    #[error("ledger is closed; no further privacy events may be recorded")]
    LedgerClosed,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown label {name:?}; vocabulary is {vocabulary:?}")]
    UnknownLabel { name: String, vocabulary: Vec<String> },

    #[error("candidate source exhausted for label {label:?}")]
    Exhausted { label: String },

    #[error("transport error (last status {status:?}): {message}")]
    Transport { status: Option<u16>, message: String },

    #[error("not enough candidates for class {class:?}: deficit {deficit}")]
    Shortage { class: String, deficit: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
