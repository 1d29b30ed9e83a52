use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("framing error: expected {expected} samples, got {actual}")]
    Framing { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("format error in `{field}`: {message}")]
    Format { field: String, message: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("split policy error for room `{room}`: {message}")]
    Policy { room: String, message: String },

    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
