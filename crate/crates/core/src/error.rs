use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("design consistency error: {0}")]
    Consistency(String),

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
