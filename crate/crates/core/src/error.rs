use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}, line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("non-positive significant wave height {value} at row {row}, column {column}")]
    NonPositiveValue { row: usize, column: usize, value: f64 },

    #[error("location {location} has zero sample variance")]
    ZeroVariance { location: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point ({x}, {y}) lies outside the mesh")]
    OutsideMesh { x: f64, y: f64 },

    #[error("matrix is not positive definite (pivot {pivot} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("non-finite model value on triangle {triangle}: {what}")]
    NonFinite { triangle: usize, what: String },

    #[error("rank-deficient least-squares design ({rows} rows, {cols} columns, rank {rank}); try a smaller basis order")]
    RankDeficient { rows: usize, cols: usize, rank: usize },

    #[error("smoothness nu = {nu} <= 1: the field is not mean-square differentiable")]
    NotDifferentiable { nu: f64 },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that come from the numerics (indefinite matrices,
    /// non-finite model values) rather than from invalid user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::NonFinite { .. } | Error::RankDeficient { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
