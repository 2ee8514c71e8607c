use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("manifest missing in {0}")]
    ManifestMissing(PathBuf),

    #[error("class {class} has {count} source sequences; at least 2 are required")]
    UndersizedClass { class: usize, count: usize },

    #[error("class {0} is not represented")]
    MissingClass(usize),

    #[error(
        "requested {requested} tuples but only {max} exist for length {length} at scale {scale}"
    )]
    TooManyTuples {
        requested: usize,
        max: u128,
        length: usize,
        scale: usize,
    },

    #[error("no runs found in {0}")]
    NoRuns(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
