//! Error types shared across the crate.

use crate::minifloat::FormatKind;
use thiserror::Error;

/// Errors produced by quantization, linear algebra, and container I/O.
#[derive(Debug, Error)]
pub enum MxError {
    /// Element quantization was handed a NaN or infinity; special values
    /// must be resolved by the block-level scale policy first.
    #[error("non-finite element {0} reached the element quantizer")]
    NonFiniteElement(f64),

    /// A block amax was negative, which violates amax = max |v|.
    #[error("invalid amax {0}: must be >= 0 or NaN")]
    InvalidAmax(f32),

    /// A block contains NaN or Inf but the target format has no NaN encoding.
    #[error("{0:?} has no NaN encoding; cannot represent a block containing NaN/Inf")]
    NonRepresentableSpecial(FormatKind),

    /// A code's bit pattern does not fit the format width.
    #[error("code bits {bits:#04x} out of range for {format:?}")]
    InvalidCode { bits: u8, format: FormatKind },

    /// Quantization of an empty tensor was requested.
    #[error("empty tensor")]
    EmptyTensor,

    /// Operand axes or shapes are incompatible for the requested GEMM;
    /// usually the caller picked the wrong one of the two tensor copies.
    #[error("axis mismatch: {0}")]
    AxisMismatch(String),

    /// Block sequences passed to a dot product do not line up.
    #[error("block length mismatch: {0}")]
    BlockLengthMismatch(String),

    /// A container file does not start with the MXT magic.
    #[error("bad magic: expected \"MXT1\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    /// A container file has an unknown version.
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),

    /// A header enum byte (kind, format, axis, scale mode) is out of range.
    #[error("unsupported {field} byte {value}")]
    UnsupportedFormat { field: &'static str, value: u8 },

    /// Payload size does not match what the header implies.
    #[error("length mismatch in {field}: expected {expected} bytes, found {found}")]
    LengthMismatch {
        field: &'static str,
        expected: u64,
        found: u64,
    },

    /// An analytic gradient deviated from finite differences beyond tolerance.
    #[error("gradient check failed for {role}: relative deviation {deviation:e}")]
    GradCheckFailed { role: String, deviation: f64 },

    /// Invalid training configuration.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MxError>;
