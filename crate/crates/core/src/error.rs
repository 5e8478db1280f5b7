use agf_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("extraction error: {0}")]
    Extraction(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },

    #[error("fold split error: {0}")]
    Split(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence {
        iteration: u64,
        detail: String,
        /// Parameters from the last step whose loss was finite.
        last_good: Box<Vec<agf_tensor::NamedTensor>>,
    },

    #[error("test-set leakage: {0}")]
    Leakage(String),

    #[error("undefined rate: {0}")]
    UndefinedRate(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
