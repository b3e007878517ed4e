use thiserror::Error;

/// Errors raised by the numerical kernels and file loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate environment: {0}")]
    DegenerateEnvironment(String),

    #[error("infeasible strategy: inter-arrival law gives zero mass to gap {gap}")]
    InfeasibleStrategy { gap: u64 },

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("renormalized environment is empty: every block is a good charge")]
    EmptyRenormalization,

    #[error("inadmissible parameters: {0}")]
    Inadmissible(String),

    #[error("truncation overflow: lost mass {lost:e} exceeds {limit:e}; raise x_max")]
    TruncationOverflow { lost: f64, limit: f64 },

    #[error("scan error: {0}")]
    Scan(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
