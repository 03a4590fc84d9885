use std::io;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    /// Invalid generation parameters.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or corrupted dataset files.
    #[error("format error: {0}")]
    Format(String),

    /// A shape whose silhouette stayed degenerate after resampling.
    #[error("degenerate silhouette for {category} after {attempts} attempts")]
    Degenerate {
        category: &'static str,
        attempts: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl DataError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DataError>;
