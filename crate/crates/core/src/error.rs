//! Error type shared across the crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, CoreError>;

/// Errors surfaced by the model stack.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Two tensors had incompatible shapes for an operation.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A single tensor had an unusable shape (wrong rank, zero dimension...).
    Dimension { op: &'static str, detail: String },
    /// Attention was called with zero keys; callers must handle the
    /// no-neighbor case before descending into the kernel.
    EmptyKeys,
    /// A documented precondition was violated.
    Contract(String),
    /// A configuration field holds an invalid value.
    Config { field: String, reason: String },
    /// An operation produced or received a NaN/Inf.
    NonFinite { op: &'static str },
    /// A loss term became non-finite during training.
    NonFiniteLoss { term: &'static str },
    /// A vector with zero norm reached a cosine-similarity computation.
    ZeroNorm { op: &'static str },
    /// A metric is undefined on the given inputs (e.g. single-class AUC).
    UndefinedMetric(String),
    /// A record stream failed to parse.
    Parse { line: usize, reason: String },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            CoreError::Dimension { op, detail } => write!(f, "{op}: {detail}"),
            CoreError::EmptyKeys => write!(f, "attention: key set is empty"),
            CoreError::Contract(msg) => write!(f, "contract violation: {msg}"),
            CoreError::Config { field, reason } => {
                write!(f, "invalid config field `{field}`: {reason}")
            }
            CoreError::NonFinite { op } => write!(f, "{op}: non-finite value"),
            CoreError::NonFiniteLoss { term } => {
                write!(f, "training aborted: loss term `{term}` is non-finite")
            }
            CoreError::ZeroNorm { op } => write!(f, "{op}: zero-norm vector"),
            CoreError::UndefinedMetric(msg) => write!(f, "metric undefined: {msg}"),
            CoreError::Parse { line, reason } => write!(f, "parse error at line {line}: {reason}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}
