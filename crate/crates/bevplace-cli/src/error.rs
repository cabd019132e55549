use std::fmt;
use std::path::Path;

/// Top-level failure classes, mapped to process exit codes: bad invocations
/// exit 1, unreadable or malformed data exits 2.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self::Usage(message.into())
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::Data(message.into())
    }

    /// Data error prefixed with the file it concerns.
    pub fn in_file(path: &Path, error: impl fmt::Display) -> Self {
        Self::Data(format!("{}: {error}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(message) | Self::Data(message) => f.write_str(message),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;
