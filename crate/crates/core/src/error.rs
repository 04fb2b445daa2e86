use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum EblpError {
    /// An evaluation point falls inside (or below) the residual bulk.
    #[error("evaluation point {x} is not above the residual bulk (top residual eigenvalue {edge})")]
    Domain { x: f64, edge: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank {rank} is invalid for a {n}x{p} problem")]
    InvalidRank { rank: usize, n: usize, p: usize },

    #[error("component index {index} out of range for rank {rank}")]
    Index { index: usize, rank: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Coordinates whose mean transform weight falls below the floor.
    #[error("degenerate coordinates (mean weight below {floor}): {coords:?}")]
    DegenerateCoordinates { floor: f64, coords: Vec<usize> },

    #[error("model is not in a usable state: {0}")]
    ModelState(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),
}

pub type Result<T> = std::result::Result<T, EblpError>;
