use thiserror::Error;

use crate::codebook::FormatError;

/// Errors raised by the field models and optimizers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    /// A propagation distance collapsed to zero.
    #[error("degenerate geometry: {what} (element {element}, point {point})")]
    DegenerateGeometry {
        what: &'static str,
        element: usize,
        point: usize,
    },

    #[error("no active delivery region: composite field is zero everywhere")]
    NoActiveRegion,

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("reference field magnitude is zero")]
    ZeroReference,

    #[error("optimizer diverged at iteration {iteration} in {stage}: cost is not finite")]
    Divergence { stage: &'static str, iteration: usize },

    #[error(
        "field cache diverged from full recomputation at sweep {sweep}: relative error {relative_error:.3e}"
    )]
    CacheInconsistency { sweep: usize, relative_error: f64 },

    #[error("duplicate codebook key at entry {index}")]
    DuplicateKey { index: usize },

    #[error(transparent)]
    Format(#[from] FormatError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
