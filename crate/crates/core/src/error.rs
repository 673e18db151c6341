use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid lattice: {0}")]
    Lattice(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid value: {0}")]
    Value(String),

    #[error("malformed file at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("checkpoint mismatch for tensor `{name}`: {message}")]
    Checkpoint { name: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }
}
