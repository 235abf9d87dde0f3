use thiserror::Error;

/// Failures mapping values onto a parameter grid.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("point has {got} values but the space has {expected} dimensions")]
    Arity { expected: usize, got: usize },
    #[error("value {value} of `{dim}` is not on its grid")]
    OffGrid { dim: String, value: String },
    #[error("label `{label}` is not a member of categorical dimension `{dim}`")]
    UnknownLabel { dim: String, label: String },
    #[error("dimension `{dim}` expects a {expected} value")]
    KindMismatch { dim: String, expected: &'static str },
    #[error("coordinate {index} is not finite")]
    NonFinite { index: usize },
}

/// Malformed PGM input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic number (expected P5)")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("maxval {0} outside 1..=65535")]
    MaxVal(u32),
    #[error("payload truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("label {0} does not fit a 16-bit PGM sample")]
    LabelTooLarge(u32),
    #[error("grid of {len} samples does not match {width}x{height}")]
    Dimensions { width: usize, height: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("mask shapes differ: {a_width}x{a_height} vs {b_width}x{b_height}")]
pub struct ShapeError {
    pub a_width: usize,
    pub a_height: usize,
    pub b_width: usize,
    pub b_height: usize,
}

/// Invalid user configuration (weights, spaces, study settings, requests).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid measurement: {0}")]
pub struct MeasurementError(pub String);

/// Errors raised by the ask/tell protocol.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("optimizer finished")]
    Finished,
    #[error("tell without a pending ask")]
    NoPendingAsk,
    #[error("told {got} results for a batch of {expected}")]
    BatchMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("surrogate fit failed: {0}")]
pub struct SurrogateError(pub String);

/// A single workflow run that did not produce a usable mask.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvaluationError {
    #[error("workflow exited with {status}: {stderr}")]
    ExitStatus { status: String, stderr: String },
    #[error("workflow timed out after {seconds}s: {stderr}")]
    Timeout { seconds: f64, stderr: String },
    #[error("could not launch workflow: {0}")]
    Spawn(String),
    #[error("unreadable output mask: {0}")]
    Output(String),
    #[error("metric failed: {0}")]
    Metric(String),
    #[error("bad workflow parameters: {0}")]
    Parameters(String),
}
