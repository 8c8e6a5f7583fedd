use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("channel {channel} has too few samples or zero variance for batch norm")]
    DegenerateChannel { channel: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NotScalar([usize; 4]),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
