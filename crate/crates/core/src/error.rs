//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("design matrix is rank deficient (pivot {pivot:e} at column {column})")]
    RankDeficient { column: usize, pivot: f64 },

    #[error("symmetric eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("observation {index} has leverage {leverage} (>= 1 - 1e-12)")]
    LeverageOne { index: usize, leverage: f64 },

    #[error("k = {k} neighbors requested but only {n} training points")]
    DegenerateNeighbors { k: usize, n: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("replicate {replicate} (master seed {seed}) failed: {source}")]
    ReplicateFailed {
        replicate: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than by the input files.
    pub fn is_numeric(&self) -> bool {
        !matches!(self, Error::Config(_) | Error::Parse { .. } | Error::Io(_))
    }
}
