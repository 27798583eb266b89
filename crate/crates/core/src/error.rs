use thiserror::Error;

/// Errors raised by the numerical routines and the experiment plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cube {cube} is not resolvable: side {side} needs at least two samples of spacing {spacing}")]
    Unresolvable { cube: String, side: f64, spacing: f64 },

    #[error("cube {0} leaves the grid window")]
    OutsideWindow(String),

    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error("weight is not positive at sample {index}: {value}")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
