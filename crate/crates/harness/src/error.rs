use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// The configuration failed to parse or validate; `path` names the field.
    #[error("invalid configuration at `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error("{0}")]
    Runtime(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code: 1 for configuration errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation { .. } => 1,
            HarnessError::Runtime(_) | HarnessError::Io { .. } => 2,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io {
            context: context.into(),
            source,
        }
    }
}
