use std::path::{Path, PathBuf};

use thiserror::Error;

/// A malformed file, located by byte offset.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at byte {offset}: {message}")]
pub struct FormatError {
    pub offset: usize,
    pub message: String,
}

impl FormatError {
    pub fn new(offset: usize, message: impl Into<String>) -> Self {
        FormatError {
            offset,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{}: {source}", path.as_ref().map_or("<memory>".into(), |p| p.display().to_string()))]
    Format {
        path: Option<PathBuf>,
        source: FormatError,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] pggtrack_core::Error),
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for invalid input, 2 for malformed files. Well-formed JSON with
    /// unknown keys or out-of-range values counts as invalid input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Format { .. } => 2,
            CliError::Json { source, .. } => match source.classify() {
                serde_json::error::Category::Data => 1,
                _ => 2,
            },
            CliError::Invalid(_) | CliError::Io { .. } | CliError::Core(_) => 1,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(source: FormatError) -> Self {
        CliError::Format { path: None, source }
    }
}
