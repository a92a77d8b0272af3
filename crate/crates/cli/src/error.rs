use std::path::PathBuf;

use gmrfmi::model::SubModel;
use gmrfmi::GmrfError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{submodel} sub-model: {source}")]
    Engine {
        submodel: SubModel,
        #[source]
        source: GmrfError,
    },
    #[error(transparent)]
    Model(#[from] GmrfError),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn parse(path: impl Into<PathBuf>, line: usize, column: usize, message: impl Into<String>) -> Self {
        CliError::Parse { path: path.into(), line, column, message: message.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    /// Short machine-readable kind for the error manifest.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "parse",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Engine { .. } | CliError::Model(_) => "engine",
        }
    }
}
