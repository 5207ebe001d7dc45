use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] sbcc_core::Error),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "E_USAGE",
            CliError::Input(_) => "E_INPUT",
            CliError::Core(e) => e.code(),
            CliError::Io { .. } => "E_IO",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Parameter errors raised while validating flags count as usage errors.
    pub fn from_flags(e: sbcc_core::Error) -> Self {
        match e {
            sbcc_core::Error::Parameter(msg) => CliError::Usage(msg),
            other => CliError::Core(other),
        }
    }

    /// Single-line `error[CODE]: message` report.
    pub fn report(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {}", self.code(), msg.trim())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(format!("CSV: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
