use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by dataset ingestion, numeric routines, and training.
#[derive(Debug, Error)]
pub enum Error {
    /// A dataset file that the flat-file layout requires is absent.
    #[error("missing dataset file: {}", path.display())]
    MissingFile { path: PathBuf },

    /// A file exists but its contents violate the expected format.
    #[error("{}:{line}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// An argument value is outside the documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numeric routine received non-finite input or failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Requested a connection distribution for a cluster pair with no edges.
    #[error("clusters {i} and {j} share no edges; connection distribution is undefined")]
    UndefinedDistribution { i: usize, j: usize },

    /// Configuration fields are individually valid but mutually inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training produced a non-finite loss and cannot continue.
    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
