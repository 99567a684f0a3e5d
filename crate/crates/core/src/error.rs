use thiserror::Error;

/// Errors produced by the library and surfaced by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty support: {0}")]
    EmptySupport(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("degenerate trace: {0}")]
    DegenerateTrace(String),
    #[error("enumeration budget exceeded: {0}")]
    Budget(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 verification, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Verification(_) => 2,
            Error::Io { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
