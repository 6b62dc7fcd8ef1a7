use std::path::PathBuf;

use medtransport::ErrorClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("data error: line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("[{module}] {source}", module = .source.module())]
    Core {
        #[from]
        source: medtransport::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 0 success, 2 config, 3 schema/data, 4 estimation; 1 for output failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Schema(_) | CliError::Row { .. } => 3,
            CliError::Core { source } => match source.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Estimation => 4,
            },
            CliError::Write { .. } => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
