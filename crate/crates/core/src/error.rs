use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the selection library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("response column `{0}` not found in header")]
    MissingResponse(String),

    #[error("non-binary response at row {row}")]
    NonBinaryResponse { row: usize },

    #[error("non-numeric cell at row {row}, column `{column}`")]
    NonNumeric { row: usize, column: String },

    #[error("constant predictor column {column}")]
    ConstantPredictor { column: usize },

    #[error("dataset already standardized")]
    AlreadyStandardized,

    #[error("dataset must be standardized first")]
    NotStandardized,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate response")]
    DegenerateResponse,

    #[error("gic undefined for {0}")]
    GicUndefined(String),

    #[error("bound inapplicable: {0}")]
    BoundInapplicable(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by the input data rather than by arguments or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::MissingResponse(_)
                | Error::NonBinaryResponse { .. }
                | Error::NonNumeric { .. }
                | Error::ConstantPredictor { .. }
                | Error::DegenerateResponse
        )
    }

    /// True for internal numerical failures.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
