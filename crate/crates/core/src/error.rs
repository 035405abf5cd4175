use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("random topology not connected after {retries} retries (m={m}, k={k})")]
    Disconnected { m: usize, k: usize, retries: usize },

    #[error("symmetric eigen-decomposition did not converge")]
    EigenFailure,

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{path}: row {row}: {msg}")]
    Csv { path: PathBuf, row: usize, msg: String },

    #[error("invalid parameter `{name}`: {msg}")]
    InvalidArgument { name: &'static str, msg: String },

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    /// Raised by the local optimizer; the engine attaches the round.
    #[error("non-finite values on client {client}")]
    NonFinite { client: usize },

    #[error("divergence: non-finite parameters at round {round}, client {client}")]
    Divergence { round: usize, client: usize },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { name, msg: msg.into() }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration and validation problems,
    /// 3 for numerical divergence, 4 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::NonFinite { .. } | Error::EigenFailure => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}
