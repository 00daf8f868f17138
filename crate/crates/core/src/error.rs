use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("decode error at cell (row {row}, col {col}, box {slot}): {reason}")]
    Decode {
        row: usize,
        col: usize,
        slot: usize,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),

    #[error("class {class_id} has no support samples")]
    MissingSupport { class_id: usize },

    #[error("covariance of class {class_id} is not positive definite; increase epsilon (currently {epsilon})")]
    SingularCovariance { class_id: usize, epsilon: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("support size {requested} exceeds the {available} samples available for class {class_name:?}")]
    SupportTooLarge {
        class_name: String,
        requested: usize,
        available: usize,
    },

    #[error("XML parse error at line {line}: {message}")]
    Xml { line: u32, message: String },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("unknown class name {0:?}")]
    UnknownClass(String),

    #[error("missing image {0:?}")]
    MissingImage(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("model failed on frame {frame}: {message}")]
    Model { frame: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("image error in {path:?}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Whether the error stems from bad values rather than from I/O or
    /// malformed files. The CLI maps this to exit code 1 (otherwise 2).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_)
                | Error::Format { .. }
                | Error::Xml { .. }
                | Error::MissingImage(_)
                | Error::Image { .. }
                | Error::EmptyInput(_)
        )
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
