//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by tensor ops, samplers, training and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("sampling failed for anchor class {anchor_class}: {reason}")]
    Sampling { anchor_class: usize, reason: String },

    #[error(
        "non-finite loss at step {step}: softmax={softmax} pos={l_pos} neg={l_neg} minor={l_minor}"
    )]
    NanLoss {
        step: usize,
        softmax: f64,
        l_pos: f64,
        l_neg: f64,
        l_minor: f64,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
