use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config{}: key `{key}`: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, key: String, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("chi grids differ: {0}")]
    GridMismatch(String),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] catecho_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit code: 1 for bad input, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. }
            | HarnessError::Validation(_)
            | HarnessError::GridMismatch(_)
            | HarnessError::Input { .. } => 1,
            HarnessError::Core(catecho_core::Error::InvalidParameter(_))
            | HarnessError::Core(catecho_core::Error::InvalidMap { .. })
            | HarnessError::Core(catecho_core::Error::Quantization { .. }) => 1,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
