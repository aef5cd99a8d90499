use std::path::Path;

/// Failure of a command, grouped by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric divergence: {0}")]
    Divergence(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("ingestion error for `{id}`: {msg}")]
    Ingest { id: String, msg: String },
    #[error("{0}")]
    Core(#[from] s2o_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use s2o_core::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
            CliError::Io(_) | CliError::Checkpoint(_) | CliError::Ingest { .. } => EXIT_IO,
            CliError::Core(E::Argument(_) | E::Dimension(_)) => EXIT_CONFIG,
            CliError::Core(E::NonFinite { .. }) => EXIT_DIVERGENCE,
            CliError::Core(_) => EXIT_INTERNAL,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}
