use thiserror::Error;

/// Errors raised by tensor construction, graph operations and optimizers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid parameter for {op}: {detail}")]
    Parameter { op: &'static str, detail: String },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("degenerate batch in {op}: need at least 2 elements per channel, got {got}")]
    DegenerateBatch { op: &'static str, got: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("checkpoint format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },

    #[error("io error: {0}")]
    Io(String),
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn param(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Parameter { op, detail: detail.into() }
    }
}

impl From<std::io::Error> for TensorError {
    fn from(e: std::io::Error) -> Self {
        TensorError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
