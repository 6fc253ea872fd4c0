use thiserror::Error;

/// Every failure maps to exit code 2 (bad config or input) or 3 (numerical
/// abort).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<doping_lm::LmError> for CliError {
    fn from(e: doping_lm::LmError) -> Self {
        match e {
            doping_lm::LmError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<doping_bench::BenchError> for CliError {
    fn from(e: doping_bench::BenchError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<doping_core::Error> for CliError {
    fn from(e: doping_core::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

pub type Result<T> = std::result::Result<T, CliError>;
