//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide error enum. Variants are grouped roughly by the kind of
/// misuse they signal so that callers (the CLI in particular) can map them
/// to coarse exit codes without string matching.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands (or an operand and a parameter set) disagree on shape.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An operation that needs at least one element received none.
    #[error("empty input to {op}")]
    EmptyInput { op: &'static str },

    /// A value produced or consumed by a numeric kernel is NaN or infinite.
    #[error("non-finite value in {op}")]
    NonFinite { op: &'static str },

    /// Invalid configuration value; the message names the offending field.
    #[error("invalid configuration: {detail}")]
    Config { detail: String },

    /// A config or data file could not be parsed; names line and cause.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    /// The finite-difference oracle hit a non-finite probe point.
    #[error("gradient oracle failure: {detail}")]
    OracleFailure { detail: String },

    /// Codebook initialization was asked for more prototypes than samples.
    #[error("insufficient samples: requested {requested} distinct rows, only {available} available")]
    InsufficientSamples { requested: usize, available: usize },

    /// An input sequence is shorter than the encoder's context window.
    #[error("input too short: {frames} frames, encoder needs at least {min}")]
    TooShortInput { frames: usize, min: usize },

    /// A backward pass was handed a cache that does not match its inputs.
    #[error("cache mismatch: {detail}")]
    CacheMismatch { detail: String },

    /// A content label is outside `[0, num_content_classes)`.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// An enrollment split cannot satisfy the requested frame budget.
    #[error("enrollment budget unsatisfiable: {detail}")]
    Budget { detail: String },

    /// The verification protocol is inconsistent (e.g. unenrolled speaker).
    #[error("trial protocol error: {detail}")]
    Protocol { detail: String },

    /// Training produced a non-finite loss and was aborted.
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    TrainingDiverged { epoch: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(detail: impl Into<String>) -> Self {
        Error::Config {
            detail: detail.into(),
        }
    }

    /// True for errors a user fixes by editing a config file or flag.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Parse { .. })
    }
}
