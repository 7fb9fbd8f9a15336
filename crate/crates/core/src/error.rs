//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column '{0}' missing from the column map or the file header")]
    MissingColumn(String),

    #[error("file '{0}' contains no data rows")]
    EmptyFile(String),

    #[error("non-monotonic timestamp at data row {row}: {t} follows {prev}")]
    NonMonotonicTimestamps { row: usize, t: i64, prev: i64 },

    #[error("annotations overlap: [{a_start},{a_end}) and [{b_start},{b_end}) for subject '{subject}'")]
    OverlappingAnnotations {
        subject: String,
        a_start: i64,
        a_end: i64,
        b_start: i64,
        b_end: i64,
    },

    #[error("annotation subject '{ann}' does not match recording subject '{rec}'")]
    SubjectMismatch { ann: String, rec: String },

    #[error("quaternion norm {norm} too far from unit to normalize safely")]
    NonUnitQuaternion { norm: f64 },

    #[error("zero-norm quaternion at sample {index}")]
    ZeroNormQuaternion { index: usize },

    #[error("cannot build a rotation about a zero-length axis")]
    ZeroAxis,

    #[error("mirror plane normal must be unit length (got norm {norm})")]
    NonUnitNormal { norm: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("model architecture hash mismatch: file {file:016x}, expected {expected:016x}")]
    ArchHashMismatch { file: u64, expected: u64 },

    #[error("file '{path}' is truncated or malformed: {detail}")]
    MalformedFile { path: String, detail: String },

    #[error("parse error in '{path}' line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
