//! GEMM engines for the training loop: a dense binary32/binary64 engine and
//! the MX engine that re-quantizes dual-axis copies from the binary32
//! masters on every use.

use crate::block_quant::{quantize_tensor, Axis, MxTensor, QuantStats, BLOCK_LEN};
use crate::error::{MxError, Result};
use crate::microtrain::Real;
use crate::minifloat::FormatKind;
use crate::mx_linalg::{mx_matmul, MmaConfig, MmaPath};
use crate::scaling::ScaleRoundingMode;
use ndarray::{Array2, ArrayView2};

/// Dense matmul with the same 32-wide inner-sum accumulation structure as
/// the MX paths, so pass-through runs are directly comparable.
pub fn chunked_matmul<F: Real>(a: ArrayView2<'_, F>, b: ArrayView2<'_, F>) -> Array2<F> {
    let (m, k) = a.dim();
    let n = b.ncols();
    debug_assert_eq!(k, b.nrows());
    let mut out = Array2::from_elem((m, n), F::zero());
    for i in 0..m {
        for j in 0..n {
            let mut acc = F::zero();
            for start in (0..k).step_by(BLOCK_LEN) {
                let len = BLOCK_LEN.min(k - start);
                let mut inner = F::zero();
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

/// The three GEMMs of one linear layer, in the copy discipline of the
/// dual-axis workflow. `slot` identifies the linear layer.
pub trait Gemm<F: Real> {
    /// Forward: y = x . w, contraction over the input dimension.
    fn fprop(&mut self, slot: usize, x: ArrayView2<'_, F>, w: ArrayView2<'_, F>)
        -> Result<Array2<F>>;

    /// Activation gradient: dx = g . w^T, contraction over the output
    /// dimension. Must be called after `fprop` for the same slot and step.
    fn dgrad(&mut self, slot: usize, g: ArrayView2<'_, F>, w: ArrayView2<'_, F>)
        -> Result<Array2<F>>;

    /// Weight gradient: dw = x^T . g, contraction over the batch dimension.
    /// Must be called after `dgrad` for the same slot and step.
    fn wgrad(&mut self, slot: usize, x: ArrayView2<'_, F>, g: ArrayView2<'_, F>)
        -> Result<Array2<F>>;
}

/// Full-precision engine: plain chunked matmuls, no quantization.
pub struct DenseGemm;

impl<F: Real> Gemm<F> for DenseGemm {
    fn fprop(
        &mut self,
        _slot: usize,
        x: ArrayView2<'_, F>,
        w: ArrayView2<'_, F>,
    ) -> Result<Array2<F>> {
        Ok(chunked_matmul(x, w))
    }

    fn dgrad(
        &mut self,
        _slot: usize,
        g: ArrayView2<'_, F>,
        w: ArrayView2<'_, F>,
    ) -> Result<Array2<F>> {
        Ok(chunked_matmul(g, w.t()))
    }

    fn wgrad(
        &mut self,
        _slot: usize,
        x: ArrayView2<'_, F>,
        g: ArrayView2<'_, F>,
    ) -> Result<Array2<F>> {
        Ok(chunked_matmul(x.t(), g))
    }
}

/// Per-role element formats. Roles cover exactly weights, activations, and
/// gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoleFormats {
    pub weights: FormatKind,
    pub activations: FormatKind,
    pub gradients: FormatKind,
}

impl RoleFormats {
    /// E4M3 for all tensors.
    pub fn cfg1() -> Self {
        RoleFormats {
            weights: FormatKind::E4M3,
            activations: FormatKind::E4M3,
            gradients: FormatKind::E4M3,
        }
    }

    /// E4M3 for weights and activations, E5M2 for gradients.
    pub fn cfg2() -> Self {
        RoleFormats {
            weights: FormatKind::E4M3,
            activations: FormatKind::E4M3,
            gradients: FormatKind::E5M2,
        }
    }
}

/// The six per-step quantized copies of one linear layer's tensors. All are
/// re-quantized from binary32 masters each step, never from each other.
#[derive(Debug, Default)]
pub struct LayerCopies {
    pub w_row: Option<MxTensor>,
    pub w_col: Option<MxTensor>,
    pub a_row: Option<MxTensor>,
    pub a_col: Option<MxTensor>,
    pub g_row: Option<MxTensor>,
    pub g_col: Option<MxTensor>,
}

/// FPROP consumes the activation's row copy and the weight's column copy
/// (both blocked along the input dimension).
pub fn fprop_gemm(a_row: &MxTensor, w_col: &MxTensor, cfg: &MmaConfig) -> Result<Array2<f32>> {
    mx_matmul(a_row, w_col, cfg)
}

/// DGRAD consumes the gradient's row copy and the transposed view of the
/// weight's row copy (both blocked along the output dimension).
pub fn dgrad_gemm(g_row: &MxTensor, w_row: &MxTensor, cfg: &MmaConfig) -> Result<Array2<f32>> {
    mx_matmul(g_row, &w_row.transposed(), cfg)
}

/// WGRAD consumes the transposed view of the activation's column copy and
/// the gradient's column copy (both blocked along the batch dimension).
pub fn wgrad_gemm(a_col: &MxTensor, g_col: &MxTensor, cfg: &MmaConfig) -> Result<Array2<f32>> {
    mx_matmul(&a_col.transposed(), g_col, cfg)
}

/// MX engine: quantizes fresh dual-axis copies from the binary32 masters on
/// every GEMM and accumulates quantization statistics for the whole run.
pub struct MxGemm {
    pub formats: RoleFormats,
    pub scale_mode: ScaleRoundingMode,
    pub mma: MmaConfig,
    pub layers: Vec<LayerCopies>,
    pub stats: QuantStats,
}

impl MxGemm {
    pub fn new(
        n_slots: usize,
        formats: RoleFormats,
        scale_mode: ScaleRoundingMode,
        path: MmaPath,
    ) -> Self {
        MxGemm {
            formats,
            scale_mode,
            mma: MmaConfig {
                path,
                ..MmaConfig::exact()
            },
            layers: (0..n_slots).map(|_| LayerCopies::default()).collect(),
            stats: QuantStats::default(),
        }
    }

    fn quantize_pair(
        &mut self,
        t: ArrayView2<'_, f32>,
        format: FormatKind,
    ) -> Result<(MxTensor, MxTensor)> {
        let (row, s1) = quantize_tensor(t, Axis::Row, format, self.scale_mode)?;
        self.stats.merge(&s1);
        let (col, s2) = quantize_tensor(t, Axis::Col, format, self.scale_mode)?;
        self.stats.merge(&s2);
        Ok((row, col))
    }

    fn copies(&self, slot: usize) -> &LayerCopies {
        &self.layers[slot]
    }
}

impl Gemm<f32> for MxGemm {
    fn fprop(
        &mut self,
        slot: usize,
        x: ArrayView2<'_, f32>,
        w: ArrayView2<'_, f32>,
    ) -> Result<Array2<f32>> {
        let (a_row, a_col) = self.quantize_pair(x, self.formats.activations)?;
        let (w_row, w_col) = self.quantize_pair(w, self.formats.weights)?;
        let out = fprop_gemm(&a_row, &w_col, &self.mma)?;
        let slot_copies = &mut self.layers[slot];
        slot_copies.a_row = Some(a_row);
        slot_copies.a_col = Some(a_col);
        slot_copies.w_row = Some(w_row);
        slot_copies.w_col = Some(w_col);
        Ok(out)
    }

    fn dgrad(
        &mut self,
        slot: usize,
        g: ArrayView2<'_, f32>,
        _w: ArrayView2<'_, f32>,
    ) -> Result<Array2<f32>> {
        let (g_row, g_col) = self.quantize_pair(g, self.formats.gradients)?;
        let slot_copies = &mut self.layers[slot];
        slot_copies.g_row = Some(g_row);
        slot_copies.g_col = Some(g_col);
        let copies = self.copies(slot);
        let w_row = copies.w_row.as_ref().ok_or_else(|| {
            MxError::InvalidConfig(format!("dgrad on slot {slot} before fprop"))
        })?;
        let g_row = copies.g_row.as_ref().expect("stored above");
        dgrad_gemm(g_row, w_row, &self.mma)
    }

    fn wgrad(
        &mut self,
        slot: usize,
        _x: ArrayView2<'_, f32>,
        _g: ArrayView2<'_, f32>,
    ) -> Result<Array2<f32>> {
        let copies = self.copies(slot);
        let a_col = copies.a_col.as_ref().ok_or_else(|| {
            MxError::InvalidConfig(format!("wgrad on slot {slot} before fprop"))
        })?;
        let g_col = copies.g_col.as_ref().ok_or_else(|| {
            MxError::InvalidConfig(format!("wgrad on slot {slot} before dgrad"))
        })?;
        wgrad_gemm(a_col, g_col, &self.mma)
    }
}
