use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("vertex {index} has non-positive camera depth {depth}")]
    BehindCamera { index: usize, depth: f64 },

    #[error("matrix is not a rotation (orthonormality residual {residual:e}, det {det})")]
    NotARotation { residual: f64, det: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("non-finite loss encountered {0}")]
    NonFinite(String),
}
