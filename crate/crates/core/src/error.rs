use thiserror::Error;

use crate::tile::TileIndex;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite: pivot {pivot_index} of tile {tile:?} is not positive")]
    NotPositiveDefinite { pivot_index: usize, tile: Option<TileIndex> },

    #[error("triangular factor has a zero diagonal entry at index {index}")]
    SingularDiagonal { index: usize },

    #[error("factor has a non-positive diagonal entry at global index {index}")]
    NonPositiveDiagonal { index: usize },

    #[error("unsupported Matern smoothness {0}; supported values are 0.5, 1.5 and 2.5")]
    UnsupportedSmoothness(f64),

    #[error("matrix has zero Frobenius norm")]
    ZeroMatrix,

    #[error("tile {0:?} is not resident in the device cache")]
    NotCached(TileIndex),

    #[error("device {device} cannot fit {requested} bytes: capacity {capacity}, pinned {pinned}")]
    CapacityExhausted { device: usize, requested: u64, capacity: u64, pinned: u64 },

    #[error("configuration is infeasible: {0}")]
    ConfigInfeasible(String),

    #[error("timed out waiting for tile {0:?} to become ready")]
    DeadlineExceeded(TileIndex),

    #[error("run aborted after a failure in another worker")]
    Aborted,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Malformed(e.to_string())
    }
}

impl Error {
    /// Short stable identifier, used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::SingularDiagonal { .. } => "SingularDiagonal",
            Error::NonPositiveDiagonal { .. } => "NonPositiveDiagonal",
            Error::UnsupportedSmoothness(_) => "UnsupportedSmoothness",
            Error::ZeroMatrix => "ZeroMatrix",
            Error::NotCached(_) => "NotCached",
            Error::CapacityExhausted { .. } => "CapacityExhausted",
            Error::ConfigInfeasible(_) => "ConfigInfeasible",
            Error::DeadlineExceeded(_) => "DeadlineExceeded",
            Error::Aborted => "Aborted",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Malformed(_) => "Malformed",
            Error::Io(_) => "Io",
        }
    }
}
