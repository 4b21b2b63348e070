use thiserror::Error;
use vidpose_tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    /// Tensor extents that violate an operation's contract.
    #[error("dimension error: {0}")]
    Shape(String),

    /// Invalid configuration value or document.
    #[error("config error: {0}")]
    Config(String),

    /// An operation was called outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite values during training or evaluation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A checkpoint does not belong to the model being evaluated.
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
