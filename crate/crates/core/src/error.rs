//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by routing, differentiation and pipeline operations.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A route plan or instance is structurally inconsistent.
    #[error("structural error: {0}")]
    Structural(String),

    /// A stated operation precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Array shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A tape node was used after the tape that owns it was freed.
    #[error("tape lifecycle error: {0}")]
    Lifecycle(String),

    /// Every candidate position of a softmax row is masked.
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    /// A loss or gradient became non-finite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Replayed actions diverged from the recorded ones.
    #[error("replay divergence: {0}")]
    Replay(String),

    /// Checkpoint is corrupt or has an unsupported version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
