use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum DemosError {
    #[error("XML parse error at line {line}: {message}")]
    Xml { line: u32, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("branch id {id} out of range (robot has {count} branches)")]
    InvalidBranch { id: usize, count: usize },

    #[error("motor index {index} out of range (robot has {count} motors)")]
    InvalidMotor { index: usize, count: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("composition refused: {0}")]
    Compose(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = DemosError> = std::result::Result<T, E>;
