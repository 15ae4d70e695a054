use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("singular system: {0}")]
    Singular(String),

    /// Evaluation outside the domain of an expression (ln of a non-positive value, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("{0}")]
    Io(String),
}

impl Error {
    /// Process exit code for the error class. Zero and one are reserved.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_) => 2,
            Error::Precondition(_) => 3,
            Error::NonConvergence(_) => 4,
            Error::Singular(_) => 5,
            Error::Domain(_) => 6,
            Error::Parse(_) => 7,
            Error::InvalidProblem(_) => 8,
            Error::Io(_) => 9,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
