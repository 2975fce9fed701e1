//! Block quantization of 2-D binary32 tensors into MX form along a declared
//! reduction axis, and dequantization back.
//!
//! A block is a contiguous run of up to 32 elements along the chosen axis;
//! each block stores one UE8M0 scale. Training keeps two copies of every
//! tensor, one per axis, so each GEMM can consume the copy whose blocks run
//! along its contraction dimension.

use crate::error::{MxError, Result};
use crate::minifloat::{exp2i, quantize, ElementCode, FormatKind};
use crate::scaling::{block_amax, compute_scale, ScaleByte, ScaleRoundingMode};
use ndarray::{Array2, ArrayView2};

/// Number of elements sharing one scale.
pub const BLOCK_LEN: usize = 32;

/// Which axis blocks run along. `Row` means a block covers contiguous
/// elements of one row (the layout used for the left GEMM operand, whose
/// contraction dimension is its columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Row,
    Col,
}

impl Axis {
    pub fn flipped(self) -> Axis {
        match self {
            Axis::Row => Axis::Col,
            Axis::Col => Axis::Row,
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Row => "row",
            Axis::Col => "col",
        })
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "row" => Ok(Axis::Row),
            "col" => Ok(Axis::Col),
            other => Err(format!("unknown axis {other:?}")),
        }
    }
}

/// Per-quantization counters. Saturation is counted only when clamping
/// changed a value; an amax landing exactly on destmax does not count.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QuantStats {
    pub n_elements: u64,
    pub n_saturated: u64,
    pub n_flushed_to_zero: u64,
    pub n_exact: u64,
    pub sum_sq_error: f64,
    pub sum_sq_signal: f64,
}

impl QuantStats {
    pub fn merge(&mut self, other: &QuantStats) {
        self.n_elements += other.n_elements;
        self.n_saturated += other.n_saturated;
        self.n_flushed_to_zero += other.n_flushed_to_zero;
        self.n_exact += other.n_exact;
        self.sum_sq_error += other.sum_sq_error;
        self.sum_sq_signal += other.sum_sq_signal;
    }

    pub fn mse(&self) -> f64 {
        if self.n_elements == 0 {
            0.0
        } else {
            self.sum_sq_error / self.n_elements as f64
        }
    }

    /// Signal-to-quantization-noise ratio in dB, or None when undefined
    /// (zero signal or zero error).
    pub fn sqnr_db(&self) -> Option<f64> {
        if self.sum_sq_signal > 0.0 && self.sum_sq_error > 0.0 {
            Some(10.0 * (self.sum_sq_signal / self.sum_sq_error).log10())
        } else {
            None
        }
    }
}

/// One quantized block: up to 32 element codes and a shared scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MxBlock {
    format: FormatKind,
    scale: ScaleByte,
    codes: Vec<u8>,
}

impl MxBlock {
    /// Quantize up to 32 binary32 values into one block.
    pub fn quantize(values: &[f32], format: FormatKind, mode: ScaleRoundingMode) -> Result<MxBlock> {
        if values.is_empty() {
            return Err(MxError::EmptyTensor);
        }
        if values.len() > BLOCK_LEN {
            return Err(MxError::BlockLengthMismatch(format!(
                "block holds at most {BLOCK_LEN} elements, got {}",
                values.len()
            )));
        }
        let mut codes = vec![0u8; values.len()];
        let mut stats = QuantStats::default();
        let scale = quantize_block(values, format, mode, &mut codes, &mut stats)?;
        Ok(MxBlock {
            format,
            scale,
            codes,
        })
    }

    pub fn from_parts(format: FormatKind, scale: ScaleByte, code_bits: &[u8]) -> Result<MxBlock> {
        if code_bits.len() > BLOCK_LEN {
            return Err(MxError::BlockLengthMismatch(format!(
                "block holds at most {BLOCK_LEN} elements, got {}",
                code_bits.len()
            )));
        }
        for &bits in code_bits {
            ElementCode::new(bits, format)?;
        }
        Ok(MxBlock {
            format,
            scale,
            codes: code_bits.to_vec(),
        })
    }

    pub fn format(&self) -> FormatKind {
        self.format
    }

    pub fn scale(&self) -> ScaleByte {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code_bits(&self) -> &[u8] {
        &self.codes
    }

    pub fn codes(&self) -> impl Iterator<Item = ElementCode> + '_ {
        let format = self.format;
        self.codes
            .iter()
            .map(move |&b| ElementCode::new(b, format).expect("codes validated on construction"))
    }

    /// Decoded values: code value times the block scale.
    pub fn dequantize(&self) -> Vec<f32> {
        let scale = self.scale.decode();
        self.codes()
            .map(|c| (c.decode() * scale) as f32)
            .collect()
    }
}

/// A 2-D tensor quantized along one axis: row-major element codes plus one
/// scale per block.
#[derive(Debug, Clone, PartialEq)]
pub struct MxTensor {
    rows: usize,
    cols: usize,
    axis: Axis,
    format: FormatKind,
    mode: ScaleRoundingMode,
    codes: Vec<u8>,
    scales: Vec<ScaleByte>,
}

impl MxTensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn format(&self) -> FormatKind {
        self.format
    }

    pub fn mode(&self) -> ScaleRoundingMode {
        self.mode
    }

    /// Row-major element code bits, one per element.
    pub fn code_bits(&self) -> &[u8] {
        &self.codes
    }

    pub fn scales(&self) -> &[ScaleByte] {
        &self.scales
    }

    /// Blocks per line along the blocked axis.
    pub fn blocks_per_line(&self) -> usize {
        match self.axis {
            Axis::Row => self.cols.div_ceil(BLOCK_LEN),
            Axis::Col => self.rows.div_ceil(BLOCK_LEN),
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.scales.len()
    }

    pub fn code_at(&self, row: usize, col: usize) -> ElementCode {
        ElementCode::new(self.codes[row * self.cols + col], self.format)
            .expect("codes validated on construction")
    }

    /// The scale governing element (row, col).
    pub fn scale_at(&self, row: usize, col: usize) -> ScaleByte {
        let idx = match self.axis {
            Axis::Row => row * self.blocks_per_line() + col / BLOCK_LEN,
            Axis::Col => col * self.blocks_per_line() + row / BLOCK_LEN,
        };
        self.scales[idx]
    }

    /// Expected number of scales for a tensor of this shape and axis.
    pub fn expected_scale_count(rows: usize, cols: usize, axis: Axis) -> usize {
        match axis {
            Axis::Row => rows * cols.div_ceil(BLOCK_LEN),
            Axis::Col => cols * rows.div_ceil(BLOCK_LEN),
        }
    }

    /// Rebuild a tensor from stored parts, validating shape arithmetic and
    /// code ranges.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        axis: Axis,
        format: FormatKind,
        mode: ScaleRoundingMode,
        codes: Vec<u8>,
        scales: Vec<ScaleByte>,
    ) -> Result<MxTensor> {
        if rows == 0 || cols == 0 {
            return Err(MxError::EmptyTensor);
        }
        if codes.len() != rows * cols {
            return Err(MxError::LengthMismatch {
                field: "codes",
                expected: (rows * cols) as u64,
                found: codes.len() as u64,
            });
        }
        let want_scales = Self::expected_scale_count(rows, cols, axis);
        if scales.len() != want_scales {
            return Err(MxError::LengthMismatch {
                field: "scales",
                expected: want_scales as u64,
                found: scales.len() as u64,
            });
        }
        for &bits in &codes {
            ElementCode::new(bits, format)?;
        }
        Ok(MxTensor {
            rows,
            cols,
            axis,
            format,
            mode,
            codes,
            scales,
        })
    }

    /// The blocks of one line along the blocked axis (a row for Row-axis
    /// tensors, a column for Col-axis tensors), in block order. Useful for
    /// feeding lines into mx_dot.
    pub fn line_blocks(&self, line: usize) -> Vec<MxBlock> {
        let bpl = self.blocks_per_line();
        let line_len = match self.axis {
            Axis::Row => self.cols,
            Axis::Col => self.rows,
        };
        (0..bpl)
            .map(|blk| {
                let start = blk * BLOCK_LEN;
                let len = BLOCK_LEN.min(line_len - start);
                let bits: Vec<u8> = (0..len)
                    .map(|i| match self.axis {
                        Axis::Row => self.codes[line * self.cols + start + i],
                        Axis::Col => self.codes[(start + i) * self.cols + line],
                    })
                    .collect();
                MxBlock::from_parts(self.format, self.scales[line * bpl + blk], &bits)
                    .expect("codes validated on construction")
            })
            .collect()
    }

    /// Transpose-relabel: the same quantized data viewed as its transpose.
    /// Codes move; scales are identical because a row block of T is the
    /// corresponding column block of T transposed. No requantization occurs.
    pub fn transposed(&self) -> MxTensor {
        let mut codes = vec![0u8; self.codes.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                codes[c * self.rows + r] = self.codes[r * self.cols + c];
            }
        }
        MxTensor {
            rows: self.cols,
            cols: self.rows,
            axis: self.axis.flipped(),
            format: self.format,
            mode: self.mode,
            codes,
            scales: self.scales.clone(),
        }
    }
}

/// Quantize one block: compute the scale from the block amax, then quantize
/// each element of value / 2^X with exact power-of-two scaling in binary64.
fn quantize_block(
    values: &[f32],
    format: FormatKind,
    mode: ScaleRoundingMode,
    codes_out: &mut [u8],
    stats: &mut QuantStats,
) -> Result<ScaleByte> {
    debug_assert_eq!(values.len(), codes_out.len());
    let fmt = format.format();
    let amax = block_amax(values);
    let scale = compute_scale(amax, format, mode)?;

    if scale.is_nan() {
        // NaN-poisoned block: every element becomes the format's NaN code.
        // compute_scale already rejected formats without a NaN encoding.
        let nan_bits = fmt.nan_code().expect("NaN scale implies NaN encoding");
        codes_out.fill(nan_bits);
        stats.n_elements += values.len() as u64;
        return Ok(scale);
    }

    let exp = scale.exponent().expect("finite scale");
    let inv_scale = exp2i(-exp);
    for (v, out) in values.iter().zip(codes_out.iter_mut()) {
        let scaled = f64::from(*v) * inv_scale; // exact
        let code = quantize(scaled, format)?;
        *out = code.bits();
        let dequant = code.decode() * exp2i(exp); // exact
        let signal = f64::from(*v);
        stats.n_elements += 1;
        if scaled.abs() > fmt.destmax {
            stats.n_saturated += 1;
        } else if *v != 0.0 && dequant == 0.0 {
            stats.n_flushed_to_zero += 1;
        } else if dequant == signal {
            stats.n_exact += 1;
        }
        let err = signal - dequant;
        stats.sum_sq_error += err * err;
        stats.sum_sq_signal += signal * signal;
    }
    Ok(scale)
}

/// Quantize a 2-D binary32 tensor along `axis` with K=32 blocks.
pub fn quantize_tensor(
    t: ArrayView2<'_, f32>,
    axis: Axis,
    format: FormatKind,
    mode: ScaleRoundingMode,
) -> Result<(MxTensor, QuantStats)> {
    let (rows, cols) = t.dim();
    if rows == 0 || cols == 0 {
        return Err(MxError::EmptyTensor);
    }
    let mut codes = vec![0u8; rows * cols];
    let mut scales = Vec::with_capacity(MxTensor::expected_scale_count(rows, cols, axis));
    let mut stats = QuantStats::default();
    let mut block_vals = [0.0f32; BLOCK_LEN];
    let mut block_codes = [0u8; BLOCK_LEN];

    match axis {
        Axis::Row => {
            for r in 0..rows {
                for start in (0..cols).step_by(BLOCK_LEN) {
                    let len = BLOCK_LEN.min(cols - start);
                    for i in 0..len {
                        block_vals[i] = t[(r, start + i)];
                    }
                    let scale = quantize_block(
                        &block_vals[..len],
                        format,
                        mode,
                        &mut block_codes[..len],
                        &mut stats,
                    )?;
                    scales.push(scale);
                    codes[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&block_codes[..len]);
                }
            }
        }
        Axis::Col => {
            for c in 0..cols {
                for start in (0..rows).step_by(BLOCK_LEN) {
                    let len = BLOCK_LEN.min(rows - start);
                    for i in 0..len {
                        block_vals[i] = t[(start + i, c)];
                    }
                    let scale = quantize_block(
                        &block_vals[..len],
                        format,
                        mode,
                        &mut block_codes[..len],
                        &mut stats,
                    )?;
                    scales.push(scale);
                    for i in 0..len {
                        codes[(start + i) * cols + c] = block_codes[i];
                    }
                }
            }
        }
    }

    Ok((
        MxTensor {
            rows,
            cols,
            axis,
            format,
            mode,
            codes,
            scales,
        },
        stats,
    ))
}

/// Dequantize back to binary32: each element is decode(code) * 2^X computed
/// exactly in binary64, then rounded to binary32. A NaN scale byte turns the
/// whole block into NaNs.
pub fn dequantize_tensor(q: &MxTensor) -> Array2<f32> {
    let mut out = Array2::zeros((q.rows, q.cols));
    for r in 0..q.rows {
        for c in 0..q.cols {
            let scale = q.scale_at(r, c).decode();
            out[(r, c)] = (q.code_at(r, c).decode() * scale) as f32;
        }
    }
    out
}

/// Quantize the same binary32 source along both axes. Both copies come from
/// the source tensor, never from each other.
pub fn quantize_both_axes(
    t: ArrayView2<'_, f32>,
    format: FormatKind,
    mode: ScaleRoundingMode,
) -> Result<(MxTensor, MxTensor)> {
    let (row_copy, _) = quantize_tensor(t, Axis::Row, format, mode)?;
    let (col_copy, _) = quantize_tensor(t, Axis::Col, format, mode)?;
    Ok((row_copy, col_copy))
}
