use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix did not have the length the receiving component expects.
    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}: bad magic number, expected {expected:#010x}, found {actual:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        actual: u32,
    },

    #[error("{path}: truncated, expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("dataset mismatch: {0}")]
    Consistency(String),

    #[error("unsupported snapshot: {0}")]
    Snapshot(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("stage '{stage}' requires output of stage '{requires}' ({path}); run that stage first")]
    MissingPrerequisite {
        stage: &'static str,
        requires: &'static str,
        path: PathBuf,
    },

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

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
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Whether the failure was caused by the supplied data rather than the configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self.root(),
            Error::BadMagic { .. }
                | Error::Truncated { .. }
                | Error::Consistency(_)
                | Error::Io { .. }
                | Error::Snapshot(_)
                | Error::Json(_)
        )
    }
}
