use std::io;
use std::path::PathBuf;

/// Errors produced by trace handling, fitting, generation, and replay.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A precondition or invariant was violated by the caller's input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Not enough (or too degenerate) data to carry out an estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Circulant embedding failed even after padding.
    #[error("noise synthesis failed: {0}")]
    Synthesis(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
