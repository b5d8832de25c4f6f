use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] diffcore::DiffError),
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
    #[error("{}: {msg} (offset {offset})", path.display())]
    Parse { path: PathBuf, offset: usize, msg: String },
    #[error("{}: unsupported version {found} (expected {expected})", path.display())]
    UnsupportedVersion { path: PathBuf, found: String, expected: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Error {
    Error::Contract { op, msg: msg.into() }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
