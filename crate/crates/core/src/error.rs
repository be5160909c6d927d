use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A line in a record file failed to parse or violated a record invariant.
    #[error("{}:{line}: {message}", path.display())]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("authentication rejected by embeddings endpoint (HTTP {status})")]
    Auth { status: u16 },

    #[error("embeddings endpoint still rate limited after {attempts} attempts")]
    RateLimited { attempts: usize },

    #[error("embeddings request failed after {attempts} attempts: {message}")]
    Network { attempts: usize, message: String },

    #[error("malformed embeddings response: {0}")]
    MalformedResponse(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn record(
        path: impl Into<PathBuf>,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::Record {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 2 for I/O and network failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Auth { .. }
            | Error::RateLimited { .. }
            | Error::Network { .. }
            | Error::MalformedResponse(_) => 2,
            _ => 1,
        }
    }
}
