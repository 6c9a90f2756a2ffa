use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A solver input violated a documented precondition.
    #[error("invalid input at state {state}: {reason}")]
    Input { state: usize, reason: String },

    #[error("numerical failure at state {state}: {reason}")]
    Numerical { state: usize, reason: String },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed csv at line {line}: {reason}")]
    CsvParse { line: u64, reason: String },

    #[error("plot error: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
