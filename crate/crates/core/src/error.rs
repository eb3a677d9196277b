use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A scene or checkpoint file failed to decode.
    #[error("invalid scene file: {section}: {reason}")]
    Format {
        section: &'static str,
        reason: String,
    },

    /// A dataset file or field could not be parsed.
    #[error("{file}: {field}: {reason}")]
    Parse {
        file: PathBuf,
        field: String,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
