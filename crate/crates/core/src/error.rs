//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e} exceeds {tolerance:.3e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("input contains non-finite values: {0}")]
    NonFinite(String),

    #[error("{algorithm} failed to converge within {iterations} iterations")]
    Convergence {
        algorithm: &'static str,
        iterations: usize,
    },

    #[error("degenerate covariance: largest eigenvalue {lambda_max:.3e} is not positive")]
    DegenerateCovariance { lambda_max: f64 },

    #[error("lag {lag} is out of range for series of length {len}")]
    LagOutOfRange { lag: usize, len: usize },

    #[error("requested dimension {requested} exceeds available rank {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("model lag {model_lag} does not match requested lag {requested_lag}")]
    LagMismatch {
        model_lag: usize,
        requested_lag: usize,
    },

    #[error("state index {state} out of range for {n_states} states")]
    StateOutOfRange { state: usize, n_states: usize },

    #[error("count matrix has no usable strongly connected component")]
    EmptyComponent,

    #[error("transition matrix is not row-stochastic: {0}")]
    NotStochastic(String),

    #[error("k-means requires k <= number of distinct points ({k} > {distinct})")]
    TooManyClusters { k: usize, distinct: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Coarse failure category, used by the CLI for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad request: invalid parameters, mismatched shapes, out-of-range lags.
    Usage,
    /// Malformed or unusable input data.
    Data,
    /// Numerical failure: non-convergence, degeneracy, training divergence.
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::ShapeMismatch(_)
            | Error::LagOutOfRange { .. }
            | Error::RankExceeded { .. }
            | Error::InvalidParameter(_)
            | Error::LagMismatch { .. }
            | Error::TooManyClusters { .. } => ErrorKind::Usage,
            Error::NonFinite(_)
            | Error::StateOutOfRange { .. }
            | Error::NotStochastic(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Serde(_) => ErrorKind::Data,
            Error::NotSymmetric { .. }
            | Error::Convergence { .. }
            | Error::DegenerateCovariance { .. }
            | Error::TrainingDiverged { .. }
            | Error::EmptyComponent => ErrorKind::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
