use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("vertex {0} has zero degree")]
    IsolatedVertex(usize),

    #[error("eigensolver failed: {reason} (residual {residual:.3e})")]
    Numeric { reason: String, residual: f64 },

    #[error("extension of eigenvector {ell} is ill-conditioned (|lambda| = {lambda:.3e})")]
    IllConditioned { ell: usize, lambda: f64 },

    #[error("{axis} {index} of the count matrix has no positive entry")]
    DegenerateMargin { axis: &'static str, index: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification of an [`Error`], used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Parse,
    Parameter,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parameter(_) | Error::DegenerateMargin { .. } => ErrorKind::Parameter,
            Error::IsolatedVertex(_) | Error::Numeric { .. } | Error::IllConditioned { .. } => {
                ErrorKind::Numeric
            }
            Error::Parse { .. } => ErrorKind::Parse,
            Error::Csv(e) if !e.is_io_error() => ErrorKind::Parse,
            Error::Io(_) | Error::Csv(_) => ErrorKind::Io,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
