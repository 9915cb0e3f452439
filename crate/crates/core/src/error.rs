use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("covariance trace must be 1, got {0}")]
    TraceNotOne(f64),
    #[error("target is not centered: E f* = {0:e}")]
    NotCentered(f64),
    #[error("degenerate activation: {0}")]
    DegenerateActivation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("iteration limit reached after {iterations} iterations (last change {residual:e})")]
    IterationLimit { iterations: usize, residual: f64 },
    #[error("not applicable: {0}")]
    NotApplicable(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
