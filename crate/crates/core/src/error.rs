use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("voxel size must be positive, got {0}")]
    InvalidVoxel(f64),

    #[error("under-constrained alignment: {matches} correspondences, at least {required} required")]
    UnderConstrained { matches: usize, required: usize },

    #[error("singular linear system (min eigenvalue {min_eigenvalue:e})")]
    SingularSystem { min_eigenvalue: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("timestamps must be strictly increasing ({previous} then {current})")]
    NonMonotonicTimestamps { previous: f64, current: f64 },

    #[error("innovation covariance is not invertible")]
    InnovationInversion,

    #[error("only {converged} Monte-Carlo samples converged, at least {required} required")]
    TooFewConverged { converged: usize, required: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
