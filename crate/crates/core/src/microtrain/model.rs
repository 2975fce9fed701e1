//! Tiny differentiable models whose linear-layer GEMMs run through a
//! pluggable engine: a small tanh MLP and a single-head self-attention
//! block. Softmax, the attention batch matmuls, activations, residual adds,
//! and biases stay full precision; only the linear layers' three GEMMs go
//! through the engine.

use crate::error::Result;
use crate::microtrain::gemm::{chunked_matmul, Gemm};
use crate::microtrain::Real;
use ndarray::{Array1, Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// One linear layer: master weights (input x output) and a full-precision
/// bias.
#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl Linear<f32> {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = 1.0 / (in_dim as f32).sqrt();
        Linear {
            w: Array2::from_shape_fn((in_dim, out_dim), |_| {
                rng.sample::<f32, _>(StandardNormal) * std
            }),
            b: Array1::zeros(out_dim),
        }
    }
}

impl<F: Real> Linear<F> {
    fn widened(src: &Linear<f32>) -> Linear<F> {
        Linear {
            w: src.w.mapv(F::from_f32),
            b: src.b.mapv(F::from_f32),
        }
    }
}

fn add_bias<F: Real>(mut y: Array2<F>, b: &Array1<F>) -> Array2<F> {
    for mut row in y.rows_mut() {
        for (v, bi) in row.iter_mut().zip(b.iter()) {
            *v += *bi;
        }
    }
    y
}

fn column_sums<F: Real>(g: &Array2<F>) -> Array1<F> {
    let mut out = Array1::from_elem(g.ncols(), F::zero());
    for row in g.rows() {
        for (o, v) in out.iter_mut().zip(row.iter()) {
            *o += *v;
        }
    }
    out
}

fn softmax_rows<F: Real>(s: &Array2<F>) -> Array2<F> {
    let mut p = s.clone();
    for mut row in p.rows_mut() {
        let mut max = row[0];
        for v in row.iter() {
            if *v > max {
                max = *v;
            }
        }
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    p
}

/// d(softmax)/ds pulled back through dp: p * (dp - rowsum(dp * p)).
fn softmax_backward<F: Real>(p: &Array2<F>, dp: &Array2<F>) -> Array2<F> {
    let mut ds = Array2::from_elem(p.dim(), F::zero());
    for i in 0..p.nrows() {
        let mut dot = F::zero();
        for j in 0..p.ncols() {
            dot += dp[(i, j)] * p[(i, j)];
        }
        for j in 0..p.ncols() {
            ds[(i, j)] = p[(i, j)] * (dp[(i, j)] - dot);
        }
    }
    ds
}

/// Gradients for one model: per-linear (dw, db) in layer order, plus the
/// gradient with respect to the model input.
pub struct Grads<F> {
    pub linears: Vec<(Array2<F>, Array1<F>)>,
    pub d_input: Array2<F>,
}

/// Which architecture the trainer drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
    Attention,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(ModelKind::Mlp),
            "attn" | "attention" => Ok(ModelKind::Attention),
            other => Err(format!("unknown model {other:?}")),
        }
    }
}

/// MLP with tanh between layers and a linear head.
#[derive(Debug, Clone)]
pub struct Mlp<F> {
    pub layers: Vec<Linear<F>>,
}

pub struct MlpCache<F> {
    /// Input to each layer.
    inputs: Vec<Array2<F>>,
    /// Post-activation output of each hidden layer (tanh values).
    hidden: Vec<Array2<F>>,
}

impl<F: Real> Mlp<F> {
    pub fn forward<E: Gemm<F>>(
        &self,
        x: ArrayView2<'_, F>,
        engine: &mut E,
    ) -> Result<(Array2<F>, MlpCache<F>)> {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut hidden = Vec::with_capacity(n.saturating_sub(1));
        let mut cur = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            let y = add_bias(engine.fprop(l, cur.view(), layer.w.view())?, &layer.b);
            cur = if l + 1 < n {
                let a = y.mapv(|v| v.tanh());
                hidden.push(a.clone());
                a
            } else {
                y
            };
        }
        Ok((cur, MlpCache { inputs, hidden }))
    }

    pub fn backward<E: Gemm<F>>(
        &self,
        cache: &MlpCache<F>,
        d_out: Array2<F>,
        engine: &mut E,
    ) -> Result<Grads<F>> {
        let n = self.layers.len();
        let mut linears = vec![None; n];
        let mut g = d_out;
        for l in (0..n).rev() {
            if l + 1 < n {
                // Through tanh: dy = g * (1 - a^2).
                let a = &cache.hidden[l];
                g.zip_mut_with(a, |gv, av| *gv = *gv * (F::one() - *av * *av));
            }
            let db = column_sums(&g);
            let dx = engine.dgrad(l, g.view(), self.layers[l].w.view())?;
            let dw = engine.wgrad(l, cache.inputs[l].view(), g.view())?;
            linears[l] = Some((dw, db));
            g = dx;
        }
        Ok(Grads {
            linears: linears.into_iter().map(Option::unwrap).collect(),
            d_input: g,
        })
    }
}

/// Single-head self-attention block with a residual connection:
/// y = x + (softmax(q k^T / sqrt(d)) v) w_o. QKV and the output projection
/// are engine linears; the two batch matmuls, softmax, and the residual add
/// are full precision.
#[derive(Debug, Clone)]
pub struct AttentionBlock<F> {
    pub wq: Linear<F>,
    pub wk: Linear<F>,
    pub wv: Linear<F>,
    pub wo: Linear<F>,
}

pub struct AttentionCache<F> {
    x: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    p: Array2<F>,
    ctx: Array2<F>,
}

const SLOT_Q: usize = 0;
const SLOT_K: usize = 1;
const SLOT_V: usize = 2;
const SLOT_O: usize = 3;

impl<F: Real> AttentionBlock<F> {
    pub fn d_model(&self) -> usize {
        self.wq.w.nrows()
    }

    fn inv_sqrt_d(&self) -> F {
        F::one() / F::from_f32(self.d_model() as f32).sqrt()
    }

    pub fn forward<E: Gemm<F>>(
        &self,
        x: ArrayView2<'_, F>,
        engine: &mut E,
    ) -> Result<(Array2<F>, AttentionCache<F>)> {
        let q = add_bias(engine.fprop(SLOT_Q, x, self.wq.w.view())?, &self.wq.b);
        let k = add_bias(engine.fprop(SLOT_K, x, self.wk.w.view())?, &self.wk.b);
        let v = add_bias(engine.fprop(SLOT_V, x, self.wv.w.view())?, &self.wv.b);
        let alpha = self.inv_sqrt_d();
        let s = chunked_matmul(q.view(), k.t()).mapv(|e| e * alpha);
        let p = softmax_rows(&s);
        let ctx = chunked_matmul(p.view(), v.view());
        let proj = add_bias(engine.fprop(SLOT_O, ctx.view(), self.wo.w.view())?, &self.wo.b);
        let out = &proj + &x;
        Ok((
            out,
            AttentionCache {
                x: x.to_owned(),
                q,
                k,
                v,
                p,
                ctx,
            },
        ))
    }

    pub fn backward<E: Gemm<F>>(
        &self,
        cache: &AttentionCache<F>,
        d_out: Array2<F>,
        engine: &mut E,
    ) -> Result<Grads<F>> {
        let alpha = self.inv_sqrt_d();

        // Output projection.
        let d_ctx = engine.dgrad(SLOT_O, d_out.view(), self.wo.w.view())?;
        let dwo = engine.wgrad(SLOT_O, cache.ctx.view(), d_out.view())?;
        let dbo = column_sums(&d_out);

        // Attention batch matmuls and softmax, full precision.
        let dp = chunked_matmul(d_ctx.view(), cache.v.t());
        let dv = chunked_matmul(cache.p.t(), d_ctx.view());
        let ds = softmax_backward(&cache.p, &dp).mapv(|e| e * alpha);
        let dq = chunked_matmul(ds.view(), cache.k.view());
        let dk = chunked_matmul(ds.t(), cache.q.view());

        // QKV projections.
        let dx_q = engine.dgrad(SLOT_Q, dq.view(), self.wq.w.view())?;
        let dwq = engine.wgrad(SLOT_Q, cache.x.view(), dq.view())?;
        let dbq = column_sums(&dq);

        let dx_k = engine.dgrad(SLOT_K, dk.view(), self.wk.w.view())?;
        let dwk = engine.wgrad(SLOT_K, cache.x.view(), dk.view())?;
        let dbk = column_sums(&dk);

        let dx_v = engine.dgrad(SLOT_V, dv.view(), self.wv.w.view())?;
        let dwv = engine.wgrad(SLOT_V, cache.x.view(), dv.view())?;
        let dbv = column_sums(&dv);

        // Residual: dx = d_out + the three projection paths.
        let mut d_input = d_out;
        d_input += &dx_q;
        d_input += &dx_k;
        d_input += &dx_v;

        Ok(Grads {
            linears: vec![(dwq, dbq), (dwk, dbk), (dwv, dbv), (dwo, dbo)],
            d_input,
        })
    }
}

/// A model of either kind, with uniform access to its linear layers.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Model<F> {
    Mlp(Mlp<F>),
    Attention(AttentionBlock<F>),
}

/// Opaque forward cache for either model kind.
#[allow(clippy::large_enum_variant)]
pub enum Cache<F> {
    Mlp(MlpCache<F>),
    Attention(AttentionCache<F>),
}

impl Model<f32> {
    /// Seeded initialization. MLP sizes are [input, hidden.., output];
    /// attention takes a single size, the model width.
    pub fn init(kind: ModelKind, sizes: &[usize], seed: u64) -> Model<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match kind {
            ModelKind::Mlp => Model::Mlp(Mlp {
                layers: sizes
                    .windows(2)
                    .map(|w| Linear::init(w[0], w[1], &mut rng))
                    .collect(),
            }),
            ModelKind::Attention => {
                let d = sizes[0];
                Model::Attention(AttentionBlock {
                    wq: Linear::init(d, d, &mut rng),
                    wk: Linear::init(d, d, &mut rng),
                    wv: Linear::init(d, d, &mut rng),
                    wo: Linear::init(d, d, &mut rng),
                })
            }
        }
    }
}

impl<F: Real> Model<F> {
    pub fn widened(src: &Model<f32>) -> Model<F> {
        match src {
            Model::Mlp(m) => Model::Mlp(Mlp {
                layers: m.layers.iter().map(Linear::widened).collect(),
            }),
            Model::Attention(a) => Model::Attention(AttentionBlock {
                wq: Linear::widened(&a.wq),
                wk: Linear::widened(&a.wk),
                wv: Linear::widened(&a.wv),
                wo: Linear::widened(&a.wo),
            }),
        }
    }

    pub fn n_linears(&self) -> usize {
        match self {
            Model::Mlp(m) => m.layers.len(),
            Model::Attention(_) => 4,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Model::Mlp(m) => m.layers.last().expect("non-empty").w.ncols(),
            Model::Attention(a) => a.d_model(),
        }
    }

    pub fn linears(&self) -> Vec<&Linear<F>> {
        match self {
            Model::Mlp(m) => m.layers.iter().collect(),
            Model::Attention(a) => vec![&a.wq, &a.wk, &a.wv, &a.wo],
        }
    }

    pub fn linears_mut(&mut self) -> Vec<&mut Linear<F>> {
        match self {
            Model::Mlp(m) => m.layers.iter_mut().collect(),
            Model::Attention(a) => vec![&mut a.wq, &mut a.wk, &mut a.wv, &mut a.wo],
        }
    }

    pub fn forward<E: Gemm<F>>(
        &self,
        x: ArrayView2<'_, F>,
        engine: &mut E,
    ) -> Result<(Array2<F>, Cache<F>)> {
        match self {
            Model::Mlp(m) => {
                let (y, c) = m.forward(x, engine)?;
                Ok((y, Cache::Mlp(c)))
            }
            Model::Attention(a) => {
                let (y, c) = a.forward(x, engine)?;
                Ok((y, Cache::Attention(c)))
            }
        }
    }

    pub fn backward<E: Gemm<F>>(
        &self,
        cache: &Cache<F>,
        d_out: Array2<F>,
        engine: &mut E,
    ) -> Result<Grads<F>> {
        match (self, cache) {
            (Model::Mlp(m), Cache::Mlp(c)) => m.backward(c, d_out, engine),
            (Model::Attention(a), Cache::Attention(c)) => a.backward(c, d_out, engine),
            _ => unreachable!("cache kind always matches model kind"),
        }
    }
}

/// Mean squared error and its gradient with respect to the prediction.
pub fn mse_loss<F: Real>(pred: &Array2<F>, target: ArrayView2<'_, F>) -> (F, Array2<F>) {
    let n = F::from_f32((pred.nrows() * pred.ncols()) as f32);
    let mut loss = F::zero();
    let mut grad = Array2::from_elem(pred.dim(), F::zero());
    let two = F::from_f32(2.0);
    for ((g, p), t) in grad.iter_mut().zip(pred.iter()).zip(target.iter()) {
        let d = *p - *t;
        loss += d * d;
        *g = two * d / n;
    }
    (loss / n, grad)
}
