use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad dimensions, out-of-range hyperparameters,
    /// unparsable config files).
    #[error("configuration error: {0}")]
    Config(String),

    /// Matrix/vector dimensions do not line up.
    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    Shape {
        expected: String,
        got: String,
        context: String,
    },

    /// Numerical failure: singular system, non-finite values, diverging loss.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An operation was called in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(expected: impl Into<String>, got: impl Into<String>, context: &str) -> Self {
        Error::Shape {
            expected: expected.into(),
            got: got.into(),
            context: context.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
