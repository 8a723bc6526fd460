use std::fmt;
use std::process::ExitCode;

use anpg::AnpgError;

/// A failure together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureKind {
    /// Bad spec, bad arguments or unreadable inputs.
    Config,
    /// An enabled audit did not pass.
    Audit,
    /// A run aborted or an output could not be written.
    Runtime,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Config,
            message: message.into(),
        }
    }

    pub fn audit(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Audit,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Runtime,
            message: message.into(),
        }
    }

    /// Library errors raised while building inputs are configuration errors.
    pub fn from_core(err: AnpgError) -> Self {
        Self::config(err.to_string())
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self.kind {
            FailureKind::Config => 1,
            FailureKind::Audit => 2,
            FailureKind::Runtime => 3,
        })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Self::runtime(format!("{err:#}"))
    }
}
