use agf_core::Error as CoreError;
use agf_rater::RaterError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERIC: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config file or parameter values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Missing, corrupt or inconsistent input artifacts.
    #[error("data error: {0}")]
    Data(String),

    /// Divergence, undefined rates and other numerical failures.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::USAGE,
            CliError::Data(_) => exit::DATA,
            CliError::Numeric(_) => exit::NUMERIC,
            CliError::Other(_) => exit::OTHER,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Parameter(_) => CliError::Config(msg),
            CoreError::Extraction(_)
            | CoreError::Format { .. }
            | CoreError::Split(_)
            | CoreError::Leakage(_)
            | CoreError::Io(_)
            | CoreError::Json(_) => CliError::Data(msg),
            CoreError::Divergence { .. } | CoreError::Numeric(_) | CoreError::UndefinedRate(_) | CoreError::Tensor(_) => {
                CliError::Numeric(msg)
            }
            CoreError::Training(_) => CliError::Other(msg),
        }
    }
}

impl From<RaterError> for CliError {
    fn from(e: RaterError) -> Self {
        let msg = e.to_string();
        match e {
            RaterError::Parameter(_) => CliError::Config(msg),
            RaterError::CorruptLog { .. } | RaterError::EmptyReport(_) | RaterError::Json(_) | RaterError::Io(_) | RaterError::NotFound(_) => CliError::Data(msg),
            RaterError::Core(c) => c.into(),
            RaterError::Conflict(_) => CliError::Other(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
