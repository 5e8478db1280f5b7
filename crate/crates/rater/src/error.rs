use thiserror::Error;

#[derive(Debug, Error)]
pub enum RaterError {
    #[error("invalid request: {0}")]
    Parameter(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("nothing to report: {0}")]
    EmptyReport(String),

    #[error("corrupt response log at line {line}: {detail}")]
    CorruptLog { line: usize, detail: String },

    #[error(transparent)]
    Core(#[from] agf_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RaterError {
    /// Stable machine-readable error code used in HTTP bodies.
    pub fn code(&self) -> &'static str {
        match self {
            RaterError::Parameter(_) => "invalid_request",
            RaterError::NotFound(_) => "not_found",
            RaterError::Conflict(_) => "conflict",
            RaterError::EmptyReport(_) => "empty_report",
            RaterError::CorruptLog { .. } => "corrupt_log",
            RaterError::Core(_) | RaterError::Io(_) | RaterError::Json(_) => "internal",
        }
    }
}

pub type Result<T> = std::result::Result<T, RaterError>;

pub(crate) fn invalid(msg: impl Into<String>) -> RaterError {
    RaterError::Parameter(msg.into())
}
