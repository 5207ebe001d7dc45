use thiserror::Error;

/// Errors raised by the correlation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A denominator (or per-bin linear system) vanished at the given bin.
    #[error("degenerate denominator at frequency bin (row {row}, col {col})")]
    DegenerateDenominator { row: usize, col: usize },

    #[error("correlation plane has no distinct peak")]
    NoPeak,

    #[error("negative context unavailable: {0}")]
    ContextUnavailable(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    /// Short stable code for machine-readable error reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "E_INPUT",
            Error::Parameter(_) => "E_PARAM",
            Error::Dimension(_) => "E_DIMENSION",
            Error::DegenerateDenominator { .. } => "E_DEGENERATE",
            Error::NoPeak => "E_NO_PEAK",
            Error::ContextUnavailable(_) => "E_CONTEXT",
            Error::Io(_) => "E_IO",
            Error::Serialization(_) => "E_SERDE",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
