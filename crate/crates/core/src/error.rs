use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite {what} at epoch {epoch}, iteration {iteration}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        iteration: usize,
    },

    #[error("degenerate sample for bandwidth")]
    DegenerateBandwidth,

    #[error("model for class {0} has not been trained")]
    Untrained(usize),

    #[error("invalid probability row {row}: {reason}")]
    InvalidProbabilities { row: usize, reason: String },

    #[error("idx: wrong magic number {found:#010x}, expected {expected:#010x}")]
    IdxMagic { found: u32, expected: u32 },

    #[error("idx: truncated file {0}")]
    IdxTruncated(String),

    #[error("idx: image count {images} does not match label count {labels}")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
