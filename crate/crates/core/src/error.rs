use thiserror::Error;

/// Errors raised while parsing IDX files.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("empty IDX file")]
    Empty,
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image count {images} disagrees with label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is out of range")]
    BadLabel { index: usize, label: u8 },
}

#[derive(Debug, Error)]
pub enum FlipError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("client shard is empty")]
    EmptyShard,

    #[error("batch is empty")]
    EmptyBatch,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("trigger inversion has no source samples")]
    EmptySourceSet,

    #[error("class {class} has {available} samples; need more than {required}")]
    InsufficientData {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("robustness certificate is degenerate: denominator is zero")]
    DegenerateCertificate,

    #[error("robustness certificate is empty: alpha = {alpha} is negative")]
    EmptyCertifiedBall { alpha: f64 },

    #[error("threshold {0} is out of range")]
    InvalidThreshold(f64),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FlipError>;

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, found: impl ToString) -> FlipError {
    FlipError::ShapeMismatch {
        op,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
