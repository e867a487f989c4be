use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] vaediff::Error),

    #[error("missing upstream artifact {}: run `vaediff {stage}` first", path.display())]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("config: {0}")]
    Config(String),

    #[error("{message}")]
    Usage { message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-readable category printed as `error[category]`.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Config(_) => "config",
            CliError::Usage { .. } => "usage",
            CliError::Io { .. } => "io",
        }
    }

    /// Process exit code: 2 for command-line and config problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
