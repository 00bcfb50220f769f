use std::io;
use std::path::PathBuf;

use terrain_qd_core::optimizer::{CandidateError, StepError};
use thiserror::Error;

/// Process exit status for successful commands.
pub const EXIT_OK: i32 = 0;
/// Bad flags, bad configuration or unreadable input files.
pub const EXIT_USAGE: i32 = 1;
/// Evaluator startup failure, evaluation failure or output IO failure.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("cannot load {}: {message}", path.display())]
    Load { path: PathBuf, message: String },
    #[error("cannot start evaluator `{command}`: {source}")]
    Startup {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("evaluation failed: {0}")]
    Step(#[from] StepError),
    #[error("evaluation failed: {0}")]
    Candidate(#[from] CandidateError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Self::Config { field, reason: reason.into() }
    }

    pub fn load(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::Load { path: path.into(), message: message.to_string() }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Load { .. } => EXIT_USAGE,
            Self::Startup { .. } | Self::Step(_) | Self::Candidate(_) | Self::Io { .. } => EXIT_RUNTIME,
        }
    }
}
