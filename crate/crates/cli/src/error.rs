use thiserror::Error;

/// Failures of a client command; each maps to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("capture failed: {0}")]
    Capture(String),
    #[error("cannot reach {url}: {message} (is the server running? set --server or ROOMREC_SERVER and retry)")]
    Transport { url: String, message: String },
    #[error("server returned {status}: {message}")]
    Server { status: u16, message: String },
    #[error(transparent)]
    Core(#[from] roomrec_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Capture(_) => 3,
            CliError::Transport { .. } => 4,
            CliError::Server { .. } => 5,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
