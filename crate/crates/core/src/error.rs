use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while reading or writing the binary tensor container.
#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("unrecognized container: expected magic \"LDWS\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("container truncated while reading {0}")]
    Truncated(String),
    #[error("container has {0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("tensor name is empty or not valid UTF-8")]
    BadName,
    #[error("duplicate tensor name '{0}'")]
    DuplicateName(String),
    #[error("tensor '{name}': declared {declared} elements but dims give {expected}")]
    SizeMismatch {
        name: String,
        declared: usize,
        expected: usize,
    },
    #[error("missing tensor '{0}'")]
    Missing(String),
    #[error("unexpected tensor '{0}'")]
    Unexpected(String),
    #[error("tensor '{name}' has shape {found:?}, expected {expected:?}")]
    WrongShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
