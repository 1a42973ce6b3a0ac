//! CLI error classification. Every failure is sorted into one of three
//! buckets so scripts can branch on the exit code alone.

use slideseg_core::CoreError;
use slideseg_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or config files. Exit code 2.
    #[error("{0}")]
    Config(String),

    /// Unreadable, missing, or inconsistent inputs. Exit code 3.
    #[error("{0}")]
    Data(String),

    /// Degenerate or non-finite numeric results. Exit code 4.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::BadSplitRatios(_)
            | CoreError::BadPatchSize(_)
            | CoreError::SpecOutOfBounds(_)
            | CoreError::InsufficientPatients { .. } => CliError::Config(e.to_string()),
            CoreError::EmptyMatrix | CoreError::DegenerateTable(_) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::InvalidConfig(_) => CliError::Config(e.to_string()),
            NnError::Core(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json error: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
