use thiserror::Error;

/// Errors raised by game construction, evaluation, solving and training.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was out of range or otherwise invalid for the operation.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A game, profile or training configuration is inconsistent.
    #[error("configuration error: {0}")]
    Configuration(String),
    /// The operation needs a capability the input does not provide
    /// (e.g. exact enumeration on a generative simulator).
    #[error("capability error: {0}")]
    Capability(String),
    /// A text input could not be parsed.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Configuration(msg.into())
    }

    pub(crate) fn capability(msg: impl Into<String>) -> Self {
        Error::Capability(msg.into())
    }
}
