use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Error, Debug)]
pub enum Error {
    /// A precondition on the inputs was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A linear system could not be solved, even after the ridge fallback.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// The inner lasso solver exhausted its pass budget.
    #[error("lasso did not converge within {passes} passes (KKT violation {violation:.3e})")]
    NonConvergence { passes: usize, violation: f64 },

    /// Every candidate fit on a tuning grid failed.
    #[error("all {attempted} tuning-grid fits failed; last error: {last}")]
    AllFitsFailed { attempted: usize, last: String },

    /// A malformed cell or row in an input CSV file.
    #[error("{path}: row {row}, column {col}: {message}")]
    CsvFormat {
        path: String,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
