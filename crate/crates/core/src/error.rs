use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("tensor format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("resource limit exceeded: {what} needs {requested} elements, limit is {limit}")]
    Resource {
        what: String,
        requested: u128,
        limit: u128,
    },

    #[error("degenerate denominator {value:e} at row {row}")]
    DegenerateDenominator { row: usize, value: f64 },

    #[error("forward map produced a non-finite value while perturbing {input}[{index}]")]
    NonFiniteForward { input: &'static str, index: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for errors that stem from resource guards or IO rather than bad
    /// arguments. The CLI maps these to a distinct exit code.
    pub fn is_resource_or_io(&self) -> bool {
        matches!(self, Error::Resource { .. } | Error::Io(_))
    }
}
