use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),

    #[error("no collision-free spawn found after {0} attempts")]
    NoSpawn(usize),

    #[error("no path reached the goal after {0} iterations")]
    NoPathFound(usize),

    #[error("tracking diverged: {0}")]
    TrackingDiverged(String),

    #[error("dataset generation stalled: {failed} of {attempted} seeds failed")]
    GenerationStalled { failed: usize, attempted: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
