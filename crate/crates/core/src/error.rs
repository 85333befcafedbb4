use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty instance: at least one point is required")]
    EmptyInstance,
    #[error("dimension must be between 1 and {max}, got {got}")]
    BadDimension { got: usize, max: usize },
    #[error("point {index} has {got} coordinates, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("{points} points but {supplies} supplies")]
    LengthMismatch { points: usize, supplies: usize },
    #[error("non-finite value at point {index}")]
    NonFinite { index: usize },
    #[error("supplies are unbalanced: sum {sum:e} exceeds tolerance {allowed:e}")]
    Unbalanced { sum: f64, allowed: f64 },
    #[error("index {index} out of range for {len} elements")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("vector length {got} does not match expected {expected}")]
    VectorLength { got: usize, expected: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("instance has {n} points, oracle cap is {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("infeasible flow: {0}")]
    Infeasible(String),
    #[error("stale or foreign tree handle")]
    StaleHandle,
    #[error("cannot merge a tree with itself")]
    AliasedTrees,
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Failures of the algorithm itself rather than of its input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Internal(_) | Error::Infeasible(_) | Error::StaleHandle | Error::AliasedTrees)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
