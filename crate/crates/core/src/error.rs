use thiserror::Error;

/// Errors raised anywhere in the labeling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("target class {target} out of range for {classes} classes")]
    ClassOutOfRange { target: usize, classes: usize },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("{source_name}:{row}: {message}")]
    Csv {
        source_name: String,
        row: usize,
        message: String,
    },

    #[error("super-pixel graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("graph carries no ground-truth labels")]
    MissingLabels,

    #[error("no labeled super-pixels")]
    NoLabeledNodes,

    #[error("non-finite gradient in {block}")]
    NonFinite { block: &'static str },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("search space of {size} assignments exceeds guard {limit}")]
    SearchSpace { size: f64, limit: f64 },

    #[error("stage `{0}` is already open")]
    StageOpen(String),

    #[error("stage `{0}` was never opened")]
    StageNotOpen(String),

    #[error("confusion matrix is empty")]
    EmptyConfusion,

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(what: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            what,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
