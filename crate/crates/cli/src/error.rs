use std::io;
use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The command was understood but will not be carried out.
    #[error("{0}")]
    Refused(String),
    #[error("{0}")]
    InvalidSpec(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Network(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl CliError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Io { .. } => 1,
            CliError::Refused(_) => 2,
            CliError::InvalidSpec(_) => 3,
            CliError::NotFound(_) => 4,
            CliError::Network(_) => 5,
        })
    }
}
