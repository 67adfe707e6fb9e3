use std::path::PathBuf;

/// Every failure the CLI reports, each mapped to one process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot access {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed {what} file {}: {message}", path.display())]
    Format { what: &'static str, path: PathBuf, message: String },
    #[error("{what} file {} has version {found}, this build reads version {expected}", path.display())]
    Version { what: &'static str, path: PathBuf, found: u64, expected: u32 },
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Core(#[from] mmct_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Core(mmct_core::Error::InvalidConfig { .. }) | CliError::Config(_) => 2,
            CliError::Core(_) => 1,
            CliError::Io { .. } | CliError::Format { .. } => 3,
            CliError::Version { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}
