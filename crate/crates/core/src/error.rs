use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: outcome is {detail}")]
    Consistency { row: usize, detail: &'static str },

    #[error("column `{column}` is not binary (row {row} holds {value})")]
    NotBinary {
        column: String,
        row: usize,
        value: f64,
    },

    #[error("column `{column}` has a missing value at row {row}")]
    UnexpectedMissing { column: String, row: usize },

    #[error("column `{column}` has {got} rows, expected {expected}")]
    LengthMismatch {
        column: String,
        got: usize,
        expected: usize,
    },

    #[error("invalid role assignment: {0}")]
    Roles(String),

    #[error("column `{0}` is constant, no association can be tested")]
    Degenerate(String),

    #[error("empty data: {0}")]
    Empty(String),

    #[error("too few observations: {n_obs} rows for {n_coef} coefficients")]
    TooFewObservations { n_obs: usize, n_coef: usize },

    #[error("likelihood ratio test requires nested fits: {0}")]
    NotNested(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
