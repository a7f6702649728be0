use thiserror::Error;

/// CLI failure, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("missing run artifacts: {}", .0.join(", "))]
    MissingFragments(Vec<String>),
    #[error(transparent)]
    Core(#[from] wmnet::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invariant(_) => 2,
            Self::Core(wmnet::Error::Diverged { .. }) => 3,
            _ => 1,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io { context: context.into(), source }
    }
}
