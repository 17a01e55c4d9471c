use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cat map {label}: {reason}")]
    InvalidMap { label: String, reason: String },

    #[error("cannot quantize {label} with N = {n}: {reason}")]
    Quantization { label: String, n: usize, reason: String },

    #[error("propagator fails unitarity check: max |U'U - I| = {deviation:e} (limit {limit:e})")]
    Unitarity { deviation: f64, limit: f64 },

    #[error("input is not unitary: max |U'U - I| = {deviation:e}")]
    NonUnitaryInput { deviation: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("eigendecomposition did not converge: {0}")]
    Convergence(String),

    #[error("cannot average over an empty state sample")]
    EmptySample,

    #[error("fit window too short: {points} usable points (t_sat = {t_sat:?})")]
    FitWindowTooShort { points: usize, t_sat: Option<usize> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cache format: {0}")]
    CacheFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
