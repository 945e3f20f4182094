use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] crr_model::Error),
    #[error(transparent)]
    Core(#[from] crr_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn file_err(path: &std::path::Path, e: impl std::fmt::Display) -> Error {
    Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}
