//! Error type shared across the workbench core.

use alloc::string::String;

/// Everything that can go wrong inside the core library.
///
/// Shape and spec errors carry a human-readable description naming the
/// offending dimension, rule, or layer; numeric errors mark the operation
/// that produced a non-finite value.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Dimension disagreement between operands.
    Shape { op: &'static str, detail: String },
    /// An operation produced NaN/Inf from finite inputs.
    NonFinite { op: &'static str },
    /// A generator-spec invariant was violated; `rule` names the invariant.
    Spec { rule: &'static str, detail: String },
    /// Text-format parse failure (1-based line number).
    Parse { line: usize, detail: String },
    /// Quantization-specific failure (invalid params, overflow bound, ...).
    Quant { detail: String },
    /// Numeric failure outside the tensor ops (eigensolver, metrics, ...).
    Numeric { detail: String },
    /// Training aborted (divergence, bad configuration).
    Train { detail: String },
    /// Dataset construction or sampling failure.
    Data { detail: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn spec(rule: &'static str, detail: impl Into<String>) -> Self {
        Error::Spec {
            rule,
            detail: detail.into(),
        }
    }
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Error::NonFinite { op } => write!(f, "{op}: produced a non-finite value"),
            Error::Spec { rule, detail } => write!(f, "spec rule '{rule}' violated: {detail}"),
            Error::Parse { line, detail } => write!(f, "parse error at line {line}: {detail}"),
            Error::Quant { detail } => write!(f, "quantization error: {detail}"),
            Error::Numeric { detail } => write!(f, "numeric error: {detail}"),
            Error::Train { detail } => write!(f, "training error: {detail}"),
            Error::Data { detail } => write!(f, "dataset error: {detail}"),
        }
    }
}

impl core::error::Error for Error {}
