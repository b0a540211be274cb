use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spectral model: {0}")]
    InvalidModel(String),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("time grids differ: {0}")]
    GridMismatch(String),

    #[error("curve resolution exceeded: {vertices} vertices (cap {cap}) at t = {time}")]
    Resolution { vertices: usize, cap: usize, time: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}
