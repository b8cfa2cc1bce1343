use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("non-integrable contribution at {cell}: {value:e}")]
    Singularity { cell: String, value: f64 },

    #[error("wrong operation: {0}")]
    WrongOperation(String),

    #[error("quadrature failure at {context}: {detail}")]
    Quadrature { context: String, detail: String },

    #[error("not converged (residual {residual:e}, last value {value:e})")]
    NonConverged { residual: f64, value: f64 },

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("no Poincare inequality: {0}")]
    NoPoincare(String),

    #[error("invariant violated: {0}")]
    InvariantViolated(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error at {path}: {detail}")]
    Io { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
