//! Differential statistics between scale-rounding modes and between element
//! formats: a desk-scale statistical proxy for how floor-rounded scales
//! saturate block maxima while round-up scales never do.

use crate::block_quant::{quantize_tensor, Axis, MxTensor, QuantStats, BLOCK_LEN};
use crate::error::Result;
use crate::minifloat::FormatKind;
use crate::scaling::ScaleRoundingMode;
use ndarray::{Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt::Write as _;

/// Name of the PRNG used for generated inputs, recorded in reports so runs
/// can be replayed.
pub const RNG_NAME: &str = "chacha8";

/// Standard-Gaussian matrix from the named, seeded PRNG.
pub fn seeded_gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f32, _>(StandardNormal))
}

/// Statistics for one quantization mode over one tensor.
#[derive(Debug, Clone)]
pub struct ModeReport {
    pub mode: ScaleRoundingMode,
    pub stats: QuantStats,
    /// Fraction of blocks whose amax element was clamped.
    pub saturation_rate: f64,
    /// Fraction of nonzero elements below the smallest representable
    /// magnitude at their block's scale (min subnormal * 2^X).
    pub underflow_rate: f64,
    pub sqnr_db: Option<f64>,
    pub n_blocks: u64,
    /// Count per scale byte (shared-exponent histogram).
    pub scale_histogram: Vec<(u8, u64)>,
}

/// Side-by-side quantization of one tensor under both rounding modes.
#[derive(Debug, Clone)]
pub struct ModeComparison {
    pub format: FormatKind,
    pub axis: Axis,
    pub round_up: ModeReport,
    pub ocp_floor: ModeReport,
}

/// Per-format statistics for a sweep across the element types.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub format: FormatKind,
    pub mode: ScaleRoundingMode,
    pub stats: QuantStats,
    pub saturation_rate: f64,
    pub underflow_rate: f64,
    pub sqnr_db: Option<f64>,
    pub n_blocks: u64,
}

/// Walk the source tensor block-by-block against the produced scales and
/// measure block-level saturation, element underflow, and the scale
/// histogram. Kept separate from quantization so the measurement is an
/// independent route over the data.
fn block_level_metrics(t: ArrayView2<'_, f32>, q: &MxTensor) -> (f64, f64, Vec<(u8, u64)>) {
    let fmt = q.format().format();
    let destmax = fmt.destmax;
    let min_sub = fmt.min_subnormal;
    let (rows, cols) = t.dim();
    let mut histogram = [0u64; 256];
    let mut n_blocks = 0u64;
    let mut saturated_blocks = 0u64;
    let mut below_min = 0u64;
    let mut n_elements = 0u64;

    let mut scan_block = |vals: &mut dyn Iterator<Item = f32>, scale_byte: u8, scale: f64| {
        histogram[scale_byte as usize] += 1;
        n_blocks += 1;
        let mut amax = 0.0f32;
        for v in vals {
            n_elements += 1;
            amax = amax.max(v.abs());
            if v != 0.0 && f64::from(v.abs()) < min_sub * scale {
                below_min += 1;
            }
        }
        if f64::from(amax) / scale > destmax {
            saturated_blocks += 1;
        }
    };

    match q.axis() {
        Axis::Row => {
            for r in 0..rows {
                for (blk, start) in (0..cols).step_by(BLOCK_LEN).enumerate() {
                    let len = BLOCK_LEN.min(cols - start);
                    let s = q.scales()[r * q.blocks_per_line() + blk];
                    let mut it = (0..len).map(|i| t[(r, start + i)]);
                    scan_block(&mut it, s.byte(), s.decode());
                }
            }
        }
        Axis::Col => {
            for c in 0..cols {
                for (blk, start) in (0..rows).step_by(BLOCK_LEN).enumerate() {
                    let len = BLOCK_LEN.min(rows - start);
                    let s = q.scales()[c * q.blocks_per_line() + blk];
                    let mut it = (0..len).map(|i| t[(start + i, c)]);
                    scan_block(&mut it, s.byte(), s.decode());
                }
            }
        }
    }

    let saturation_rate = if n_blocks == 0 {
        0.0
    } else {
        saturated_blocks as f64 / n_blocks as f64
    };
    let underflow_rate = if n_elements == 0 {
        0.0
    } else {
        below_min as f64 / n_elements as f64
    };
    let hist = histogram
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(b, &c)| (b as u8, c))
        .collect();
    (saturation_rate, underflow_rate, hist)
}

fn mode_report(
    t: ArrayView2<'_, f32>,
    format: FormatKind,
    axis: Axis,
    mode: ScaleRoundingMode,
) -> Result<ModeReport> {
    let (q, stats) = quantize_tensor(t, axis, format, mode)?;
    let (saturation_rate, underflow_rate, scale_histogram) = block_level_metrics(t, &q);
    Ok(ModeReport {
        mode,
        sqnr_db: stats.sqnr_db(),
        stats,
        saturation_rate,
        underflow_rate,
        n_blocks: q.n_blocks() as u64,
        scale_histogram,
    })
}

/// Quantize a tensor under both scale-rounding modes and report per-mode
/// statistics.
pub fn compare_rounding(
    t: ArrayView2<'_, f32>,
    format: FormatKind,
    axis: Axis,
) -> Result<ModeComparison> {
    Ok(ModeComparison {
        format,
        axis,
        round_up: mode_report(t, format, axis, ScaleRoundingMode::RoundUp)?,
        ocp_floor: mode_report(t, format, axis, ScaleRoundingMode::OcpFloor)?,
    })
}

/// Quantize a tensor under every element format at a fixed mode.
pub fn dtype_sweep(
    t: ArrayView2<'_, f32>,
    axis: Axis,
    mode: ScaleRoundingMode,
) -> Result<Vec<SweepEntry>> {
    FormatKind::ALL
        .iter()
        .map(|&format| {
            let r = mode_report(t, format, axis, mode)?;
            Ok(SweepEntry {
                format,
                mode,
                stats: r.stats,
                saturation_rate: r.saturation_rate,
                underflow_rate: r.underflow_rate,
                sqnr_db: r.sqnr_db,
                n_blocks: r.n_blocks,
            })
        })
        .collect()
}

fn fmt_sqnr(v: Option<f64>) -> String {
    match v {
        Some(db) => format!("{db:.4}"),
        None => "na".to_string(),
    }
}

/// One key=value record per line; records separated by blank lines.
fn kv_record(out: &mut String, mode: ScaleRoundingMode, format: FormatKind, sat: f64, under: f64, sqnr: Option<f64>, n_blocks: u64) {
    let _ = writeln!(out, "mode={mode}");
    let _ = writeln!(out, "format={format}");
    let _ = writeln!(out, "saturation_rate={sat:.6}");
    let _ = writeln!(out, "underflow_rate={under:.6}");
    let _ = writeln!(out, "sqnr_db={}", fmt_sqnr(sqnr));
    let _ = writeln!(out, "n_blocks={n_blocks}");
}

impl ModeComparison {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "rounding-mode comparison: format={} axis={}",
            self.format, self.axis
        );
        for r in [&self.round_up, &self.ocp_floor] {
            let _ = writeln!(
                s,
                "  mode={:<9} blocks={} saturation_rate={:.6} underflow_rate={:.6} mse={:.6e} sqnr_db={}",
                r.mode.to_string(),
                r.n_blocks,
                r.saturation_rate,
                r.underflow_rate,
                r.stats.mse(),
                fmt_sqnr(r.sqnr_db),
            );
        }
        s
    }

    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        for r in [&self.round_up, &self.ocp_floor] {
            kv_record(
                &mut out,
                r.mode,
                self.format,
                r.saturation_rate,
                r.underflow_rate,
                r.sqnr_db,
                r.n_blocks,
            );
            out.push('\n');
        }
        out
    }
}

/// Render a dtype sweep as human-readable lines.
pub fn render_sweep_text(entries: &[SweepEntry]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format sweep:");
    for e in entries {
        let _ = writeln!(
            s,
            "  format={:<5} mode={:<9} blocks={} saturation_rate={:.6} underflow_rate={:.6} sqnr_db={}",
            e.format.to_string(),
            e.mode.to_string(),
            e.n_blocks,
            e.saturation_rate,
            e.underflow_rate,
            fmt_sqnr(e.sqnr_db),
        );
    }
    s
}

/// Render a dtype sweep as key=value records.
pub fn render_sweep_kv(entries: &[SweepEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        kv_record(
            &mut out,
            e.mode,
            e.format,
            e.saturation_rate,
            e.underflow_rate,
            e.sqnr_db,
            e.n_blocks,
        );
        out.push('\n');
    }
    out
}
