use thiserror::Error;

/// Errors raised by the evidence pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("row {row}, column `{column}`: {message}")]
    Malformed {
        row: usize,
        column: String,
        message: String,
    },

    #[error("study `{id}`: {message}")]
    Invalid { id: String, message: String },

    #[error("duplicate study id `{0}`")]
    DuplicateId(String),

    #[error("no studies")]
    Empty,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("solver did not converge within {iterations} iterations (best bound {best})")]
    NonConvergence { iterations: usize, best: f64 },

    #[error("structured ledger: {0}")]
    Structured(String),
}

impl Error {
    /// Input-side failures map to exit status 2, everything else to 1.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Malformed { .. }
                | Error::Invalid { .. }
                | Error::DuplicateId(_)
                | Error::Empty
                | Error::Structured(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
