use thiserror::Error;

use crate::config::Source;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{at}: {message}")]
    ConfigAt { at: Source, message: String },

    #[error(transparent)]
    Core(#[from] agcnn::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) | CliError::ConfigAt { .. } => "config",
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::ConfigAt { .. } => 2,
            _ => 1,
        }
    }
}
