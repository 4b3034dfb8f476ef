use thiserror::Error;

/// Errors raised by the field, training and transfer routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum IfmError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("z = {z} lies outside the plate interval [0, {gap}]")]
    OutOfPlates { z: f64, gap: f64 },

    #[error("quark and antiquark coincide in extended space")]
    DegeneratePair,

    #[error("evaluation point coincides with a charge")]
    CoincidentCharge,

    #[error("batch of {batch} exceeds the exact-assignment cap of {cap}")]
    AssignmentCap { batch: usize, cap: usize },

    #[error("every target in the batch is degenerate")]
    AllDegenerate,

    #[error("loss diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("field line stalled: |E| = {magnitude:e} at step {step}")]
    StalledLine { step: usize, magnitude: f64 },

    #[error("field line exceeded {max} plane crossings")]
    TooManyCrossings { max: usize },

    #[error("field line exceeded the path-length budget of {budget}")]
    PathBudget { budget: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for IfmError {
    fn from(e: std::io::Error) -> Self {
        IfmError::Io(e.to_string())
    }
}

pub type Result<T, E = IfmError> = std::result::Result<T, E>;
