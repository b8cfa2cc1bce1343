use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: bbmlab_core::Error,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Attaches the operation that failed to a core error.
pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T, HarnessError>;
}

impl<T> Context<T> for bbmlab_core::Result<T> {
    fn context(self, what: impl Into<String>) -> Result<T, HarnessError> {
        self.map_err(|source| HarnessError::Core {
            context: what.into(),
            source,
        })
    }
}
