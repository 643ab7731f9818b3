use thiserror::Error;

/// Errors raised by the numerical kernels, oracles and solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("operator is not positive definite (curvature {curvature:e} at iteration {iteration})")]
    NonPositiveDefinite { iteration: usize, curvature: f64 },
    #[error("tolerance not met: {what} reached {achieved:e} > {target:e} after {iterations} iterations")]
    ToleranceNotMet {
        what: String,
        achieved: f64,
        target: f64,
        iterations: usize,
    },
    #[error("divergence detected at step {step}: non-finite iterate")]
    DivergenceDetected { step: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
