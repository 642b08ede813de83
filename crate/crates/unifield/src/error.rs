use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto failure classes the CLI turns into distinct exit codes:
/// configuration, data (I/O, parsing, registry), and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left {lhs:?}, right {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain schema: expected flow vector of length {expected} for domain '{domain}', got {got}")]
    DomainSchema {
        domain: String,
        expected: usize,
        got: usize,
    },

    #[error("routing: unknown domain id {0}")]
    Routing(usize),

    #[error("registry: {0}")]
    Registry(String),

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step} (batch of samples {sample_ids:?})")]
    NonFiniteLoss { step: usize, sample_ids: Vec<String> },

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
