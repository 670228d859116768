//! Harness error type with the CLI's exit-code mapping:
//! 1 usage, 2 numerical failure, 3 I/O (including file parse errors).

use alphacal_core::CoreError;
use std::fmt;

#[derive(Debug)]
pub enum HarnessError {
    Usage(String),
    Numerical(String),
    Io(String),
    Parse { path: String, line: usize, msg: String },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Numerical(_) => 2,
            HarnessError::Io(_) | HarnessError::Parse { .. } => 3,
        }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Usage(msg) => write!(f, "usage error: {msg}"),
            HarnessError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            HarnessError::Io(msg) => write!(f, "i/o error: {msg}"),
            HarnessError::Parse { path, line, msg } => {
                write!(f, "parse error in {path} at line {line}: {msg}")
            }
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        HarnessError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
