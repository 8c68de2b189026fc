use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulation, encoding and learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain the operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// Operands do not have conforming shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A NaN or infinity appeared where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Scenario geometry violates an invariant.
    #[error("invalid geometry: {0}")]
    Geometry(String),

    /// A simulated receiver or a marker fell outside the allowed region.
    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    /// Malformed file content.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// A dataset split or sample set came out empty.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn dims(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
