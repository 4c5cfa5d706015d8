use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data (bad grid, out-of-range cell).
    #[error("invalid input: {0}")]
    Input(String),

    /// Inconsistent run configuration (rank/block counts, dtype, file size).
    #[error("configuration error: {0}")]
    Config(String),

    /// A peer sent something the protocol does not allow.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Fragments of one column disagree on an interior row.
    #[error("data corruption: {0}")]
    Corruption(String),

    /// An algorithmic invariant failed to hold (unreduced matrix, runaway loop).
    #[error("internal invariant violated: {0}")]
    Internal(String),

    /// Channel or socket failure, including collective timeouts.
    #[error("transport failure: {0}")]
    Transport(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Config(_) | Error::Io { .. } => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
