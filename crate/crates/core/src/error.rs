use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by fitting, estimation, data loading and the simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("outcome out of range for {family} family at row {row}: {value}")]
    InvalidOutcome {
        family: &'static str,
        row: usize,
        value: f64,
    },

    #[error("arm empty: treated={n1}, control={n0}")]
    ArmEmpty { n1: usize, n0: usize },

    #[error("arm too small for variance estimation: treated={n1}, control={n0} (need at least 2 each)")]
    ArmTooSmall { n1: usize, n0: usize },

    #[error("invalid treated count n1={n1} for N={n}; need 1 <= n1 <= N-1")]
    InvalidTreatedCount { n: usize, n1: usize },

    #[error("enumeration of C({n}, {n1}) allocations exceeds cap {cap}")]
    CapExceeded { n: usize, n1: usize, cap: usize },

    #[error("invalid confidence level {0}; must lie strictly inside (0, 1)")]
    InvalidLevel(f64),

    #[error("invalid variance {0}")]
    InvalidVariance(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("empty input file {0}")]
    EmptyInput(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
