use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("session error: {0}")]
    Session(String),
    #[error("scoring error: {0}")]
    Scoring(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Session(_) => 3,
            CliError::Scoring(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    pub(crate) fn io(what: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{what}: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
