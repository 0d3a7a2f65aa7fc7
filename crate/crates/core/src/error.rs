use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is numerically singular")]
    SingularMatrix,

    #[error("negative variance {0:e}")]
    NegativeVariance(f64),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("underdetermined calibration: {0}")]
    Underdetermined(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("chain {0} contains no valid quotes")]
    EmptyChain(PathBuf),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user-supplied data rather than by a
    /// failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::InvalidParameter(_)
                | Error::Format { .. }
                | Error::EmptyChain(_)
                | Error::Underdetermined(_)
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}
