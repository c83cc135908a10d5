//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("invalid augmentation policy: {0}")]
    Policy(String),
    #[error("target {target} out of range for {n_classes} classes")]
    Target { target: usize, n_classes: usize },
    #[error("target {0} is not in the candidate set")]
    TargetNotCandidate(usize),
    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: u64, loss: f64 },
    #[error("report error: {0}")]
    Report(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
