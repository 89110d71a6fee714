use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:.3e})")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("non-finite coefficient value {value} at x = ({x:.6}, {y:.6})")]
    NonFiniteCoefficient { x: f64, y: f64, value: f64 },

    #[error("state Newton iteration failed: {reason}; residual history {history:?}")]
    StateSolve { reason: String, history: Vec<f64> },

    #[error("semismooth Newton failed: {reason}; residual history {history:?}")]
    OuterSolve { reason: String, history: Vec<f64> },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn at_sample(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
