//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time index {index} outside 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("divergent integral: {0}")]
    DivergentIntegral(String),

    #[error("unsupported backend: {0}")]
    UnsupportedBackend(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("degenerate tau: |tau| = {value:e} below threshold {threshold:e}")]
    DegenerateTau { value: f64, threshold: f64 },

    #[error("series window too narrow: {0}")]
    WindowTooNarrow(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("rejection sampler starved: acceptance rate {rate:e}")]
    RejectionStarvation { rate: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
