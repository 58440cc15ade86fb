use std::path::PathBuf;

use noisykag_core::BackendError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(#[from] noisykag_core::Error),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl Error {
    /// Config, schema and usage problems exit with 2; everything else with 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Dataset(_) | Error::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
