use thiserror::Error;

/// Errors raised by the ANPG library.
#[derive(Debug, Error)]
pub enum AnpgError {
    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("Fisher lower bound {mu_f:.3e} is at or below mu_floor {floor:.3e}{}", at_iteration(*.iteration))]
    FisherDegenerate {
        mu_f: f64,
        floor: f64,
        iteration: Option<usize>,
    },

    #[error("parameter norm {norm:.3e} exceeded divergence limit at outer iteration {iteration}")]
    Divergence { iteration: usize, norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn at_iteration(iteration: Option<usize>) -> String {
    match iteration {
        Some(k) => format!(" at outer iteration {k}"),
        None => String::new(),
    }
}

impl AnpgError {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        AnpgError::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, AnpgError>;
