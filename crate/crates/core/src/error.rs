use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of its valid range. `key` names the offending field.
    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: video `{video}`: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        video: String,
        message: String,
    },

    #[error("non-finite value in `{block}`")]
    Numeric { block: String },

    #[error("dimension mismatch: {what} (expected {expected}, found {found})")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed model file {path}: {message}")]
    Model { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
