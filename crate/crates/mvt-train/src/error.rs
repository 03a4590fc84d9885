use std::path::{Path, PathBuf};
use thiserror::Error;

/// Errors raised by training, evaluation, and sweep orchestration.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("sweep state error: {0}")]
    Format(String),

    #[error(transparent)]
    Core(#[from] mvt_core::CoreError),

    #[error(transparent)]
    Data(#[from] mvt_data::DataError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;
