use std::path::{Path, PathBuf};

/// Errors of the std layer. Core errors pass through unchanged.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {message}", location(.path, *.line))]
    Ingest { path: PathBuf, line: Option<usize>, message: String },
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] facetpath_core::Error),
    #[error("{}: {source}", .path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

fn location(path: &Path, line: Option<usize>) -> String {
    match line {
        Some(l) => format!("{}:{l}", path.display()),
        None => path.display().to_string(),
    }
}

impl Error {
    pub(crate) fn ingest(path: &Path, line: Option<usize>, message: impl Into<String>) -> Self {
        Self::Ingest { path: path.to_path_buf(), line, message: message.into() }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    /// Line number of an ingest error, if it points at one.
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Ingest { line, .. } => *line,
            _ => None,
        }
    }
}
