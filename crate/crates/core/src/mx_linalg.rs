//! Matrix multiplication over MX tensors.
//!
//! Two paths produce the same contraction over different machinery:
//! the exact reference path decodes element codes and accumulates per-block
//! dot products scaled by both blocks' scales, and the emulation path
//! dequantizes to BF16-rounded binary32 values and runs a binary32-
//! accumulate matmul, mirroring how MX arithmetic is emulated on hardware
//! without native MX support.
//!
//! Both paths accumulate per-block inner sums first and then add block
//! contributions in block order, all in binary32, so results are
//! deterministic and the two paths agree bit-for-bit whenever the
//! dequantized values are exactly BF16-representable.

use crate::block_quant::{quantize_tensor, Axis, MxBlock, MxTensor, QuantStats, BLOCK_LEN};
use crate::error::{MxError, Result};
use crate::minifloat::{round_bf16, ElementCode, FormatKind};
use crate::scaling::ScaleRoundingMode;
use ndarray::{Array2, ArrayView2};

/// Which multiplication machinery to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmaPath {
    /// Decode codes, per-block binary32 dot products scaled by both scales.
    ExactScaled,
    /// Dequantize, round to BF16, binary32-accumulate matmul.
    Bf16Emulation,
}

impl std::str::FromStr for MmaPath {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(MmaPath::ExactScaled),
            "bf16" => Ok(MmaPath::Bf16Emulation),
            other => Err(format!("unknown mma path {other:?}")),
        }
    }
}

/// Accumulation order; only sequential block order is defined, and it is
/// part of the contract: any parallel schedule must reproduce it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccumulationOrder {
    #[default]
    SequentialBlocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MmaConfig {
    pub path: MmaPath,
    pub accumulation_order: AccumulationOrder,
}

impl MmaConfig {
    pub fn exact() -> Self {
        MmaConfig {
            path: MmaPath::ExactScaled,
            accumulation_order: AccumulationOrder::SequentialBlocks,
        }
    }

    pub fn bf16() -> Self {
        MmaConfig {
            path: MmaPath::Bf16Emulation,
            accumulation_order: AccumulationOrder::SequentialBlocks,
        }
    }
}

/// Per-format decode table: code bits index to the decoded binary32 value.
/// Every element value is exactly representable in binary32.
fn decode_table(format: FormatKind) -> [f32; 256] {
    let mut table = [f32::NAN; 256];
    let n = 1u16 << format.width();
    for bits in 0..n {
        table[bits as usize] = ElementCode::new(bits as u8, format)
            .expect("in-range code")
            .decode() as f32;
    }
    table
}

/// Dot product of two block sequences with matching boundaries.
///
/// Per block: binary32 inner sum of decoded code products, multiplied by
/// both block scales; block contributions accumulate sequentially. A NaN
/// scale on either side makes the result NaN.
pub fn mx_dot(a: &[MxBlock], b: &[MxBlock]) -> Result<f32> {
    let len_a: usize = a.iter().map(MxBlock::len).sum();
    let len_b: usize = b.iter().map(MxBlock::len).sum();
    if len_a != len_b || a.len() != b.len() {
        return Err(MxError::BlockLengthMismatch(format!(
            "left has {} elements in {} blocks, right has {} in {}",
            len_a,
            a.len(),
            len_b,
            b.len()
        )));
    }
    let mut acc = 0.0f32;
    for (ba, bb) in a.iter().zip(b) {
        if ba.len() != bb.len() {
            return Err(MxError::BlockLengthMismatch(format!(
                "block sizes {} and {} do not line up",
                ba.len(),
                bb.len()
            )));
        }
        let ta = decode_table(ba.format());
        let tb = decode_table(bb.format());
        acc += block_contribution(
            ba.scale().decode() as f32,
            ba.code_bits(),
            &ta,
            bb.scale().decode() as f32,
            bb.code_bits(),
            &tb,
        );
    }
    Ok(acc)
}

fn block_contribution(
    scale_a: f32,
    codes_a: &[u8],
    table_a: &[f32; 256],
    scale_b: f32,
    codes_b: &[u8],
    table_b: &[f32; 256],
) -> f32 {
    let mut inner = 0.0f32;
    for (&ca, &cb) in codes_a.iter().zip(codes_b) {
        inner += table_a[ca as usize] * table_b[cb as usize];
    }
    // Scales are powers of two, so these multiplies are exact absent
    // under/overflow; multiplying the inner sum first keeps 2^-127 scales
    // from underflowing prematurely.
    inner * scale_a * scale_b
}

/// Multiply a row-blocked tensor by a column-blocked tensor.
///
/// Both operands must be blocked along the contraction dimension: the left
/// along its rows (axis = Row), the right along its columns (axis = Col).
/// Anything else means the caller picked the wrong copy of a dual-axis
/// tensor pair and is rejected with AxisMismatch.
pub fn mx_matmul(a: &MxTensor, b: &MxTensor, cfg: &MmaConfig) -> Result<Array2<f32>> {
    if a.axis() != Axis::Row {
        return Err(MxError::AxisMismatch(format!(
            "left operand must be row-blocked, got {}-blocked {}x{}",
            a.axis(),
            a.rows(),
            a.cols()
        )));
    }
    if b.axis() != Axis::Col {
        return Err(MxError::AxisMismatch(format!(
            "right operand must be col-blocked, got {}-blocked {}x{}",
            b.axis(),
            b.rows(),
            b.cols()
        )));
    }
    if a.cols() != b.rows() {
        return Err(MxError::AxisMismatch(format!(
            "contraction mismatch: left is {}x{}, right is {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    match cfg.path {
        MmaPath::ExactScaled => Ok(exact_scaled_matmul(a, b)),
        MmaPath::Bf16Emulation => {
            let (da, _) = dequantize_bf16(a);
            let (db, _) = dequantize_bf16(b);
            Ok(chunked_matmul_f32(da.view(), db.view()))
        }
    }
}

fn exact_scaled_matmul(a: &MxTensor, b: &MxTensor) -> Array2<f32> {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    let table_a = decode_table(a.format());
    let table_b = decode_table(b.format());
    let mut out = Array2::zeros((m, n));
    let a_codes = a.code_bits();
    let b_codes = b.code_bits();
    let mut b_col = vec![0u8; k];
    for j in 0..n {
        for (i, slot) in b_col.iter_mut().enumerate() {
            *slot = b_codes[i * n + j];
        }
        for i in 0..m {
            let a_row = &a_codes[i * k..(i + 1) * k];
            let mut acc = 0.0f32;
            for (blk, start) in (0..k).step_by(BLOCK_LEN).enumerate() {
                let len = BLOCK_LEN.min(k - start);
                let sa = a.scales()[i * a.blocks_per_line() + blk].decode() as f32;
                let sb = b.scales()[j * b.blocks_per_line() + blk].decode() as f32;
                acc += block_contribution(
                    sa,
                    &a_row[start..start + len],
                    &table_a,
                    sb,
                    &b_col[start..start + len],
                    &table_b,
                );
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Dequantize and round every element to BF16 precision. The second return
/// counts elements whose exact decoded value is finite but overflows to
/// infinity in the cast (possible only with scales near 2^127); such
/// elements become Inf rather than clamping.
pub fn dequantize_bf16(q: &MxTensor) -> (Array2<f32>, u64) {
    let mut overflows = 0u64;
    let mut out = Array2::zeros((q.rows(), q.cols()));
    for r in 0..q.rows() {
        for c in 0..q.cols() {
            let exact = q.code_at(r, c).decode() * q.scale_at(r, c).decode();
            let cast = round_bf16(exact as f32);
            if exact.is_finite() && cast.is_infinite() {
                overflows += 1;
            }
            out[(r, c)] = cast;
        }
    }
    (out, overflows)
}

/// Dense binary32 matmul with the same accumulation structure as the exact
/// path: 32-wide inner sums over the contraction dimension, then sequential
/// block accumulation.
pub fn chunked_matmul_f32(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>) -> Array2<f32> {
    let (m, k) = a.dim();
    let n = b.ncols();
    debug_assert_eq!(k, b.nrows());
    let mut out = Array2::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f32;
            for start in (0..k).step_by(BLOCK_LEN) {
                let len = BLOCK_LEN.min(k - start);
                let mut inner = 0.0f32;
                for kk in start..start + len {
                    inner += a[(i, kk)] * b[(kk, j)];
                }
                acc += inner;
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Binary64 reference matmul over binary32 inputs, used for error reports.
pub fn reference_matmul_f64(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>) -> Array2<f64> {
    let (m, k) = a.dim();
    let n = b.ncols();
    debug_assert_eq!(k, b.nrows());
    let mut out = Array2::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for kk in 0..k {
                acc += f64::from(a[(i, kk)]) * f64::from(b[(kk, j)]);
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Relative Frobenius distance between a binary32 result and a binary64
/// reference: |c - ref|_F / |ref|_F.
pub fn frobenius_relative_error(c: &Array2<f32>, reference: &Array2<f64>) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (x, r) in c.iter().zip(reference.iter()) {
        let d = f64::from(*x) - r;
        num += d * d;
        den += r * r;
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Quantize a binary32 MMA output for consumption by a following MX
/// operation. Named step of the conversion pipeline; delegates to
/// quantize_tensor.
pub fn quantize_mma_output(
    c: ArrayView2<'_, f32>,
    axis: Axis,
    format: FormatKind,
    mode: ScaleRoundingMode,
) -> Result<(MxTensor, QuantStats)> {
    quantize_tensor(c, axis, format, mode)
}
