use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("token id {id} is outside the vocabulary of size {vocab}")]
    OutOfVocabulary { id: usize, vocab: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("{what} is truncated: need {needed} more bytes, have {available}")]
    Length {
        what: String,
        needed: usize,
        available: usize,
    },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("non-finite training loss {0}")]
    NonFiniteLoss(f64),

    #[error("checkpoint version mismatch: file has version {found}, expected {expected}")]
    Version { found: u8, expected: u8 },

    #[error("corrupt checkpoint: {0}")]
    Corruption(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension { op, left, right }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used by the command line for machine-readable failures.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Contract(_) => "contract",
            Error::OutOfVocabulary { .. } => "out-of-vocabulary",
            Error::Format(_) | Error::Version { .. } => "format",
            Error::Length { .. } => "length",
            Error::Consistency(_) => "consistency",
            Error::Degenerate(_) => "degenerate-data",
            Error::Parse { .. } => "parse",
            Error::Divergence { .. } | Error::NonFiniteLoss(_) => "divergence",
            Error::Corruption(_) => "corruption",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}
