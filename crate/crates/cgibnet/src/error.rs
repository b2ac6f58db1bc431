//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CgibError {
    /// Caller violated an operation's precondition (stepping a finished
    /// episode, aggregating incompatible runs, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A numeric contract was violated (non-finite value, argument outside
    /// its domain after clamping).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Config validation failure; lists every offending key.
    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    /// Checkpoint does not match the architecture it is being loaded into.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("map data error: {0}")]
    MapData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CgibError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CgibError::Usage(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CgibError::Numerical(msg.into())
    }
}
