use std::path::PathBuf;

/// Errors produced anywhere in the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated an operation's precondition (shapes, ranges).
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A numeric guard tripped (non-finite values, probabilities out of range).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Configuration validation failed; every offending key is listed.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    /// A checkpoint or manifest was written by an incompatible schema.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed record in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
