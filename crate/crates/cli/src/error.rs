use std::fmt;
use std::path::{Path, PathBuf};

use rffence_core::Error as CoreError;

/// Process exit codes.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => EXIT_CONFIG,
            ErrorKind::Numerical => EXIT_NUMERICAL,
            ErrorKind::Io => EXIT_IO,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Numerical => "numerical",
            ErrorKind::Io => "io",
        }
    }
}

/// A failure reported as one `error[kind]: message` line.
#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Numerical,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self {
            kind: ErrorKind::Io,
            message: format!("{}: {err}", path.display()),
        }
    }

    /// Wraps a library error, naming the pipeline stage it came from.
    pub fn from_core(stage: &str, err: CoreError) -> Self {
        let kind = match &err {
            CoreError::InvalidParameter { .. }
            | CoreError::DimensionMismatch { .. }
            | CoreError::DuplicateKey { .. }
            | CoreError::Empty(_) => ErrorKind::Config,
            CoreError::Format(_) => ErrorKind::Io,
            _ => ErrorKind::Numerical,
        };
        Self {
            kind,
            message: format!("{stage}: {err}"),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    /// Single line; embedded newlines are flattened.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.message.replace('\n', " ");
        write!(f, "error[{}]: {msg}", self.kind.tag())
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) trait Stage<T> {
    fn stage(self, stage: &str) -> CliResult<T>;
}

impl<T> Stage<T> for Result<T, CoreError> {
    fn stage(self, stage: &str) -> CliResult<T> {
        self.map_err(|e| CliError::from_core(stage, e))
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T, E: fmt::Display> IoContext<T> for Result<T, E> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| CliError::io(path, e))
    }
}

pub(crate) fn create_dir(path: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(path).at(path)?;
    Ok(path.to_path_buf())
}
