use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("direction is invisible to the toric data (xi2 = 0)")]
    InvisibleDirection,

    #[error("degenerate circle: radius {0} must exceed 1")]
    DegenerateCircle(f64),

    #[error("point outside scan region: x2 = {0}")]
    OutsideScanRegion(f64),

    #[error("{solver} did not converge after {iterations} iterations")]
    NonConvergence { solver: &'static str, iterations: usize },

    #[error("power iteration stalled after {iterations} iterations at estimate {estimate}")]
    SpectralNonConvergence { estimate: f64, iterations: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
