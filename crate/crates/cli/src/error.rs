use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Problem with an input or output file. `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct DataError {
    pub file: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl DataError {
    pub fn new(file: &Path, message: impl Into<String>) -> Self {
        Self { file: file.to_path_buf(), line: None, message: message.into() }
    }

    pub fn at(file: &Path, line: usize, message: impl Into<String>) -> Self {
        Self { file: file.to_path_buf(), line: Some(line), message: message.into() }
    }
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.file.display(), l, self.message),
            None => write!(f, "{}: {}", self.file.display(), self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Divergence(String),
    /// Classical and optimization forms disagree beyond tolerance.
    #[error("{0}")]
    Equivalence(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Data(_) => "data",
            Self::Divergence(_) => "divergence",
            Self::Equivalence(_) => "equivalence",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Divergence(_) | Self::Equivalence(_) => 3,
        }
    }

    /// `error[<kind>]: <message>` on a single line.
    pub fn report_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {}", self.kind(), msg.trim())
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> CliError {
    DataError::new(path, e.to_string()).into()
}
