use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown suite `{0}` (expected flow, transport, mollifier, radon, gradients or all)")]
    UnknownSuite(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] stiflow_core::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// 2 for bad input, 3 for numerical failures, 4 for failed checks.
    pub fn exit_code(&self) -> i32 {
        use stiflow_core::Error as E;
        match self {
            CliError::Config(_) | CliError::UnknownSuite(_) | CliError::Io { .. } | CliError::Format { .. } => 2,
            CliError::Core(
                E::InvalidGrid(_)
                | E::InvalidTimeGrid(_)
                | E::InvalidKernel(_)
                | E::InvalidSchedule(_)
                | E::InvalidConfig(_)
                | E::UnknownPhantom(_)
                | E::GridTooSmall { .. }
                | E::KernelUnresolvable { .. }
                | E::NonPositiveDelta(_),
            ) => 2,
            CliError::Core(_) => 3,
            CliError::Verification(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::UnknownSuite(_) => "unknown_suite",
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::Core(_) if self.exit_code() == 2 => "config",
            CliError::Core(_) => "numerical",
            CliError::Verification(_) => "verification",
        }
    }
}
