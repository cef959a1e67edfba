use thiserror::Error;

/// Failures mapped onto the documented exit statuses.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input.
    #[error("{0}")]
    Input(String),
    /// The model could not be fitted or evaluated.
    #[error("{0}")]
    Numerical(String),
    /// A command ran before the artifacts it reads were produced.
    #[error("{0}")]
    MissingArtifact(String),
    #[error("writing {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::MissingArtifact(_) => 4,
            CliError::Write { .. } => 2,
        }
    }
}
