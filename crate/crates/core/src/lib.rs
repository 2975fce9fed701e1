//! Bit-exact, hardware-independent implementation of microscaling (MX)
//! block floating-point formats: minifloat codecs for the five MX element
//! types, UE8M0 shared-scale computation under round-up and OCP-floor
//! rounding, block/tensor quantization with K=32 blocks, emulated MX matrix
//! multiplication, rounding-mode analysis, a toy quantized training loop,
//! and a deterministic binary tensor container.

pub mod analysis;
pub mod block_quant;
pub mod error;
pub mod microtrain;
pub mod minifloat;
pub mod mx_linalg;
pub mod scaling;
pub mod tensor_io;

pub use block_quant::{
    dequantize_tensor, quantize_both_axes, quantize_tensor, Axis, MxBlock, MxTensor, QuantStats,
    BLOCK_LEN,
};
pub use error::{MxError, Result};
pub use minifloat::{quantize, round_bf16, ElementCode, FormatKind, MiniFloatFormat};
pub use mx_linalg::{mx_dot, mx_matmul, quantize_mma_output, MmaConfig, MmaPath};
pub use scaling::{block_amax, compute_scale, ScaleByte, ScaleRoundingMode};
