use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter vector has length {got}, the {model} schema expects {expected}")]
    Schema {
        model: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration failed at step {step}: non-finite state")]
    Integration { step: usize },

    #[error("{location}: {message}")]
    Parse { location: String, message: String },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("missing mandatory config keys: {}", .0.join(", "))]
    MissingKeys(Vec<String>),

    #[error("ensemble collapse: only {healthy} healthy members remain")]
    Collapse { healthy: usize },

    #[error("iteration {iteration}: {failed} of {total} members failed to simulate")]
    TooManyFailures {
        iteration: usize,
        failed: usize,
        total: usize,
    },

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Integration { .. }
                | Error::Collapse { .. }
                | Error::TooManyFailures { .. }
                | Error::Solver(_)
        )
    }
}
