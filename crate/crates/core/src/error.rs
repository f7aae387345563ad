use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is singular: pivot {pivot:.3e} in column {column}")]
    Singular { column: usize, pivot: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} did not converge after {iterations} iterations (best estimate {estimate:.6e}, residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        estimate: f64,
        residual: f64,
    },

    #[error("row {row} sums to {sum} (expected 1)")]
    NotStochastic { row: usize, sum: f64 },

    #[error("no unique stationary vector: the chain has more than one closed class")]
    Reducible,

    #[error("uniformization rate {gamma} is below the largest exit rate {rate}")]
    GammaTooSmall { gamma: f64, rate: f64 },

    #[error("model failed validation:\n{0}")]
    Invalid(ValidationReport),

    #[error("walk is not positive recurrent ({0}); the explicit stationary distribution requires a finite expected return time to layer 0")]
    NotPositiveRecurrent(String),

    #[error("limiting blocks are not in the positive-recurrent domain: the tail return-time series diverges (radius {radius})")]
    NotInD { radius: f64 },

    #[error("truncated system with {states} states exceeds the dense limit of {limit}; lower the truncation level")]
    TooLarge { states: usize, limit: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed model file: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
