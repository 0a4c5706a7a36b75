use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("row {row}: {source}")]
    InvalidRow { row: usize, source: GeometryError },
    #[error("expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("label set is empty")]
    EmptyLabels,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("task mismatch: {0}")]
    TaskMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed tree: {0}")]
    MalformedTree(String),
}

pub type Result<T> = std::result::Result<T, Error>;
