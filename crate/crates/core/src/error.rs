use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("file is truncated")]
    TruncatedFile,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: u32 },

    #[error("fraction {0} out of range")]
    FractionOutOfRange(f64),

    #[error("did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("linear system is singular")]
    SingularSystem,

    #[error("index set is empty")]
    EmptyIndexSet,

    #[error("degenerate bound: denominator {denominator} is not positive")]
    DegenerateBound { denominator: f64 },

    #[error("divergence detected: loss {loss} exceeds {limit}")]
    DivergenceDetected { loss: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
