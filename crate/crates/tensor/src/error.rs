use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    /// Operand extents are incompatible with the operation.
    #[error("{op}: dimension error: {detail}")]
    Shape { op: &'static str, detail: String },

    /// The operation was invoked in a way its contract forbids.
    #[error("{op}: usage error: {detail}")]
    Usage { op: &'static str, detail: String },

    /// A non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::Shape {
        op,
        detail: detail.into(),
    })
}

pub(crate) fn usage_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::Usage {
        op,
        detail: detail.into(),
    })
}
