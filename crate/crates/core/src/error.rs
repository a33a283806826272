use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bandwidth, chain lengths, hyperparameters).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file content.
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// Input does not match the declared column schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Linear algebra or sampling failure.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Parse { .. } | Error::Schema(_) | Error::Io(_) | Error::Csv(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}
