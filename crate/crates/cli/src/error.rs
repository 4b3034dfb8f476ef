use std::fmt;

use ifm_core::IfmError;

/// Command failures, each with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration (exit 1).
    Usage(String),
    /// A verification check ran and failed (exit 2).
    CheckFailed(String),
    /// Anything that went wrong while running (exit 3).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::CheckFailed(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<IfmError> for CliError {
    fn from(e: IfmError) -> Self {
        match e {
            IfmError::InvalidGeometry(_) | IfmError::InvalidValue(_) | IfmError::DimensionMismatch { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

/// Adds context to a core error without changing its class.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for Result<T, IfmError> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|e| match CliError::from(e) {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", what())),
            CliError::CheckFailed(m) => CliError::CheckFailed(format!("{}: {m}", what())),
            CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", what())),
        })
    }
}
