use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: decode failure: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("{path}: unsupported image format")]
    UnsupportedFormat { path: PathBuf },
    #[error("{0}: image has zero size")]
    EmptyImage(PathBuf),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed network spec: {0}")]
    Spec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] pgcycle_autograd::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
