//! A minimal training loop where every linear layer runs its three GEMMs
//! (FPROP, DGRAD, WGRAD) through the MX machinery with the correct dual-axis
//! tensor copies. Master weights and optimizer state stay in binary32; a
//! pass-through mode disables quantization entirely so gradient checks and
//! reference traces are exact.

mod gemm;
mod model;

pub use gemm::{
    chunked_matmul, dgrad_gemm, fprop_gemm, wgrad_gemm, DenseGemm, Gemm, LayerCopies, MxGemm,
    RoleFormats,
};
pub use model::{mse_loss, AttentionBlock, Grads, Linear, Mlp, Model, ModelKind};

use crate::block_quant::QuantStats;
use crate::error::{MxError, Result};
use crate::mx_linalg::MmaPath;
use crate::scaling::ScaleRoundingMode;
use ndarray::{s, Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Scalar for the model math: binary32 for training, binary64 for gradient
/// checks.
pub trait Real:
    num_traits::Float + std::ops::AddAssign + std::fmt::Debug + Send + Sync + 'static
{
    fn from_f32(x: f32) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f32(x: f32) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn from_f32(x: f32) -> Self {
        f64::from(x)
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Quantization policy for a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Identity quantizers: the run is plain binary32 and bit-identical to
    /// the reference trace.
    PassThrough,
    /// MX quantization with per-role formats.
    Mx {
        formats: RoleFormats,
        scale_mode: ScaleRoundingMode,
    },
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// MLP: [input, hidden.., output]. Attention: [width].
    pub layer_sizes: Vec<usize>,
    pub steps: usize,
    pub lr: f32,
    pub momentum: f32,
    /// Rows per step; for the attention model this is the sequence length.
    pub batch: usize,
    pub n_samples: usize,
    /// Target noise standard deviation.
    pub noise: f32,
    pub seed: u64,
    pub quant: QuantMode,
    pub mma_path: MmaPath,
}

impl TrainConfig {
    /// Small regression MLP, the default demo task.
    pub fn mlp_demo(seed: u64, quant: QuantMode) -> TrainConfig {
        TrainConfig {
            model: ModelKind::Mlp,
            layer_sizes: vec![16, 32, 8],
            steps: 400,
            lr: 0.02,
            momentum: 0.9,
            batch: 32,
            n_samples: 256,
            noise: 0.05,
            seed,
            quant,
            mma_path: MmaPath::ExactScaled,
        }
    }

    /// Single attention block on sequence regression.
    pub fn attention_demo(seed: u64, quant: QuantMode) -> TrainConfig {
        TrainConfig {
            model: ModelKind::Attention,
            layer_sizes: vec![16],
            steps: 300,
            lr: 0.05,
            momentum: 0.9,
            batch: 16,
            n_samples: 128,
            noise: 0.05,
            seed,
            quant,
            mma_path: MmaPath::ExactScaled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(MxError::InvalidConfig(msg));
        match self.model {
            ModelKind::Mlp => {
                if self.layer_sizes.len() < 2 {
                    return fail("mlp needs at least [input, output] sizes".into());
                }
                if self.layer_sizes.len() > 4 {
                    return fail("desk-scale model: at most 2 hidden layers".into());
                }
            }
            ModelKind::Attention => {
                if self.layer_sizes.len() != 1 {
                    return fail("attention takes exactly one size, the width".into());
                }
            }
        }
        if self.layer_sizes.iter().any(|&s| s == 0 || s > 256) {
            return fail("layer sizes must be in 1..=256".into());
        }
        if self.steps == 0 || self.steps > 5000 {
            return fail("steps must be in 1..=5000".into());
        }
        if self.batch == 0 || self.n_samples == 0 || !self.n_samples.is_multiple_of(self.batch) {
            return fail("n_samples must be a positive multiple of batch".into());
        }
        let lr_ok = self.lr.is_finite() && self.lr > 0.0;
        if !lr_ok || !(0.0..1.0).contains(&self.momentum) {
            return fail("lr must be positive and momentum in [0, 1)".into());
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }
}

/// Synthetic regression data: Gaussian inputs, targets from a fixed random
/// teacher of the same architecture kind, plus Gaussian label noise.
/// Targets are generated batch-by-batch with the same slicing the trainer
/// uses, which matters for the attention model where rows of a batch attend
/// to each other.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f32>,
    pub y: Array2<f32>,
}

pub fn synthetic_regression(cfg: &TrainConfig) -> Result<Dataset> {
    let d_in = cfg.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let x = Array2::from_shape_fn((cfg.n_samples, d_in), |_| {
        rng.sample::<f32, _>(StandardNormal)
    });

    let teacher_sizes: Vec<usize> = match cfg.model {
        ModelKind::Mlp => {
            let out = *cfg.layer_sizes.last().expect("validated");
            vec![d_in, 24, out]
        }
        ModelKind::Attention => vec![d_in],
    };
    let teacher = Model::init(cfg.model, &teacher_sizes, cfg.seed ^ 0x7ea5_c0de);

    let out_dim = teacher.output_dim();
    let mut y = Array2::<f32>::zeros((cfg.n_samples, out_dim));
    let mut engine = DenseGemm;
    for start in (0..cfg.n_samples).step_by(cfg.batch) {
        let end = start + cfg.batch;
        let (pred, _) = teacher.forward(x.slice(s![start..end, ..]), &mut engine)?;
        y.slice_mut(s![start..end, ..]).assign(&pred);
    }
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x015e_c0de);
    y.mapv_inplace(|v| v + cfg.noise * noise_rng.sample::<f32, _>(StandardNormal));
    Ok(Dataset { x, y })
}

/// Outcome of one training run paired with its binary32 reference run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Per-step loss of the configured run.
    pub losses: Vec<f32>,
    /// Per-step loss of the binary32 reference run (same init and data).
    pub ref_losses: Vec<f32>,
    /// Step at which the configured run's loss went non-finite, if any.
    pub diverged_at: Option<usize>,
    /// Aggregated quantization counters over the whole run (zero in
    /// pass-through mode).
    pub stats: QuantStats,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f32> {
        self.losses.last().copied()
    }

    pub fn final_ref_loss(&self) -> Option<f32> {
        self.ref_losses.last().copied()
    }
}

fn run_loop<E: Gemm<f32>>(
    mut model: Model<f32>,
    engine: &mut E,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Vec<f32>, Option<usize>)> {
    let n_batches = cfg.n_samples / cfg.batch;
    let mut momenta: Vec<(Array2<f32>, ndarray::Array1<f32>)> = model
        .linears()
        .iter()
        .map(|l| {
            (
                Array2::zeros(l.w.dim()),
                ndarray::Array1::zeros(l.b.len()),
            )
        })
        .collect();
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let b = step % n_batches;
        let rows = s![b * cfg.batch..(b + 1) * cfg.batch, ..];
        let x = data.x.slice(rows);
        let target = data.y.slice(rows);

        let (pred, cache) = model.forward(x, engine)?;
        let (loss, d_pred) = mse_loss(&pred, target);
        losses.push(loss);
        if !loss.is_finite() {
            return Ok((losses, Some(step)));
        }

        let grads = model.backward(&cache, d_pred, engine)?;
        let (lr, mu) = (cfg.lr, cfg.momentum);
        for (lin, ((mom_w, mom_b), (dw, db))) in model
            .linears_mut()
            .into_iter()
            .zip(momenta.iter_mut().zip(grads.linears.iter()))
        {
            mom_w.zip_mut_with(dw, |m, g| *m = mu * *m + g);
            lin.w.zip_mut_with(mom_w, |w, m| *w -= lr * m);
            mom_b.zip_mut_with(db, |m, g| *m = mu * *m + g);
            lin.b.zip_mut_with(mom_b, |w, m| *w -= lr * m);
        }
    }
    Ok((losses, None))
}

/// Train the configured run and a binary32 reference run sharing
/// initialization and data order.
pub fn train(cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let data = synthetic_regression(cfg)?;
    let init = Model::init(cfg.model, &cfg.layer_sizes, cfg.seed);

    let (ref_losses, _) = run_loop(init.clone(), &mut DenseGemm, &data, cfg)?;

    let (losses, diverged_at, stats) = match cfg.quant {
        QuantMode::PassThrough => {
            let (losses, diverged) = run_loop(init, &mut DenseGemm, &data, cfg)?;
            (losses, diverged, QuantStats::default())
        }
        QuantMode::Mx {
            formats,
            scale_mode,
        } => {
            let mut engine = MxGemm::new(init.n_linears(), formats, scale_mode, cfg.mma_path);
            let (losses, diverged) = run_loop(init, &mut engine, &data, cfg)?;
            (losses, diverged, engine.stats)
        }
    };

    Ok(TrainReport {
        losses,
        ref_losses,
        diverged_at,
        stats,
    })
}

/// Result of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_deviation: f64,
    pub worst_role: String,
}

const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn loss_of<F: Real, E: Gemm<F>>(
    model: &Model<F>,
    x: ArrayView2<'_, F>,
    target: ArrayView2<'_, F>,
    engine: &mut E,
) -> Result<F> {
    let (pred, _) = model.forward(x, engine)?;
    Ok(mse_loss(&pred, target).0)
}

/// Validate the backward pass (copy selection, transposes, bias sums)
/// against central finite differences with quantization disabled. Runs in
/// binary64 so the only deviation left is the finite-difference truncation
/// itself; fails if any parameter or input gradient deviates beyond 1e-4
/// relative, naming the offending tensor role.
pub fn gradcheck(
    kind: ModelKind,
    sizes: &[usize],
    batch: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if sizes.is_empty() || batch == 0 {
        return Err(MxError::InvalidConfig(
            "gradcheck needs layer sizes and a positive batch".into(),
        ));
    }
    let model32 = Model::init(kind, sizes, seed);
    let mut model: Model<f64> = Model::widened(&model32);
    let d_in = sizes[0];
    let out_dim = model.output_dim();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e_ad);
    let x = Array2::from_shape_fn((batch, d_in), |_| rng.sample::<f64, _>(StandardNormal));
    let target = Array2::from_shape_fn((batch, out_dim), |_| {
        rng.sample::<f64, _>(StandardNormal)
    });

    let mut engine = DenseGemm;
    let (pred, cache) = model.forward(x.view(), &mut engine)?;
    let (_, d_pred) = mse_loss(&pred, target.view());
    let analytic = model.backward(&cache, d_pred, &mut engine)?;

    let mut worst = (0.0f64, String::from("none"));
    let mut check = |analytic: f64, fd: f64, role: &str| -> Result<()> {
        let dev = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3);
        if dev > worst.0 {
            worst = (dev, role.to_string());
        }
        if dev > GRADCHECK_TOLERANCE {
            return Err(MxError::GradCheckFailed {
                role: role.to_string(),
                deviation: dev,
            });
        }
        Ok(())
    };

    let h = 1e-5;
    let n_linears = model.n_linears();
    for l in 0..n_linears {
        let (wr, wc) = analytic.linears[l].0.dim();
        for i in 0..wr {
            for j in 0..wc {
                let orig = model.linears()[l].w[(i, j)];
                model.linears_mut()[l].w[(i, j)] = orig + h;
                let up = loss_of(&model, x.view(), target.view(), &mut engine)?;
                model.linears_mut()[l].w[(i, j)] = orig - h;
                let down = loss_of(&model, x.view(), target.view(), &mut engine)?;
                model.linears_mut()[l].w[(i, j)] = orig;
                let fd = (up - down) / (2.0 * h);
                check(analytic.linears[l].0[(i, j)], fd, &format!("layer{l} weights"))?;
            }
        }
        for j in 0..analytic.linears[l].1.len() {
            let orig = model.linears()[l].b[j];
            model.linears_mut()[l].b[j] = orig + h;
            let up = loss_of(&model, x.view(), target.view(), &mut engine)?;
            model.linears_mut()[l].b[j] = orig - h;
            let down = loss_of(&model, x.view(), target.view(), &mut engine)?;
            model.linears_mut()[l].b[j] = orig;
            let fd = (up - down) / (2.0 * h);
            check(analytic.linears[l].1[j], fd, &format!("layer{l} bias"))?;
        }
    }
    // Input gradients validate the DGRAD chain end to end.
    let mut x_pert = x.clone();
    for i in 0..batch {
        for j in 0..d_in {
            let orig = x_pert[(i, j)];
            x_pert[(i, j)] = orig + h;
            let up = loss_of(&model, x_pert.view(), target.view(), &mut engine)?;
            x_pert[(i, j)] = orig - h;
            let down = loss_of(&model, x_pert.view(), target.view(), &mut engine)?;
            x_pert[(i, j)] = orig;
            let fd = (up - down) / (2.0 * h);
            check(analytic.d_input[(i, j)], fd, "input")?;
        }
    }

    Ok(GradCheckReport {
        max_relative_deviation: worst.0,
        worst_role: worst.1,
    })
}

/// Gradient check with quantization enabled: the deviation is dominated by
/// the quantizer step size and is reported, not asserted.
pub fn gradcheck_quantized(
    kind: ModelKind,
    sizes: &[usize],
    batch: usize,
    seed: u64,
    formats: RoleFormats,
    scale_mode: ScaleRoundingMode,
) -> Result<GradCheckReport> {
    if sizes.is_empty() || batch == 0 {
        return Err(MxError::InvalidConfig(
            "gradcheck needs layer sizes and a positive batch".into(),
        ));
    }
    let model = Model::init(kind, sizes, seed);
    let d_in = sizes[0];
    let out_dim = model.output_dim();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e_ad);
    let mut x = Array2::from_shape_fn((batch, d_in), |_| rng.sample::<f32, _>(StandardNormal));
    let target = Array2::from_shape_fn((batch, out_dim), |_| {
        rng.sample::<f32, _>(StandardNormal)
    });

    let mut engine = MxGemm::new(model.n_linears(), formats, scale_mode, MmaPath::ExactScaled);
    let (pred, cache) = model.forward(x.view(), &mut engine)?;
    let (_, d_pred) = mse_loss(&pred, target.view());
    let analytic = model.backward(&cache, d_pred, &mut engine)?;

    let h = 1e-2f32;
    let mut worst = (0.0f64, String::from("none"));
    for i in 0..batch {
        for j in 0..d_in {
            let orig = x[(i, j)];
            x[(i, j)] = orig + h;
            let up = loss_of(&model, x.view(), target.view(), &mut engine)?;
            x[(i, j)] = orig - h;
            let down = loss_of(&model, x.view(), target.view(), &mut engine)?;
            x[(i, j)] = orig;
            let fd = f64::from(up - down) / (2.0 * f64::from(h));
            let a = f64::from(analytic.d_input[(i, j)]);
            let dev = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            if dev > worst.0 {
                worst = (dev, format!("input[{i},{j}]"));
            }
        }
    }
    Ok(GradCheckReport {
        max_relative_deviation: worst.0,
        worst_role: worst.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_through_trace_is_bit_identical_to_reference() {
        let cfg = TrainConfig {
            steps: 60,
            ..TrainConfig::mlp_demo(7, QuantMode::PassThrough)
        };
        let report = train(&cfg).unwrap();
        assert_eq!(report.losses.len(), 60);
        for (a, b) in report.losses.iter().zip(&report.ref_losses) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(report.stats.n_elements, 0);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let cfg = TrainConfig {
            steps: 30,
            ..TrainConfig::mlp_demo(
                11,
                QuantMode::Mx {
                    formats: RoleFormats::cfg1(),
                    scale_mode: ScaleRoundingMode::RoundUp,
                },
            )
        };
        let r1 = train(&cfg).unwrap();
        let r2 = train(&cfg).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&r1.losses), bits(&r2.losses));
    }

    #[test]
    fn quantized_training_learns() {
        let cfg = TrainConfig {
            steps: 200,
            ..TrainConfig::mlp_demo(
                5,
                QuantMode::Mx {
                    formats: RoleFormats::cfg1(),
                    scale_mode: ScaleRoundingMode::RoundUp,
                },
            )
        };
        let report = train(&cfg).unwrap();
        assert!(report.diverged_at.is_none());
        let first = report.losses[0];
        let last = report.final_loss().unwrap();
        assert!(last < first * 0.5, "loss went {first} -> {last}");
        assert!(report.stats.n_elements > 0);
    }

    #[test]
    fn ocp_floor_saturates_more_than_round_up() {
        let mk = |mode| TrainConfig {
            steps: 50,
            ..TrainConfig::mlp_demo(
                13,
                QuantMode::Mx {
                    formats: RoleFormats::cfg1(),
                    scale_mode: mode,
                },
            )
        };
        let up = train(&mk(ScaleRoundingMode::RoundUp)).unwrap();
        let floor = train(&mk(ScaleRoundingMode::OcpFloor)).unwrap();
        assert_eq!(up.stats.n_saturated, 0);
        assert!(floor.stats.n_saturated > up.stats.n_saturated);
    }

    #[test]
    fn cfg2_uses_e5m2_gradients() {
        let f = RoleFormats::cfg2();
        assert_eq!(f.gradients, crate::minifloat::FormatKind::E5M2);
        assert_eq!(f.weights, crate::minifloat::FormatKind::E4M3);
        let cfg = TrainConfig {
            steps: 20,
            ..TrainConfig::mlp_demo(
                3,
                QuantMode::Mx {
                    formats: f,
                    scale_mode: ScaleRoundingMode::RoundUp,
                },
            )
        };
        assert!(train(&cfg).unwrap().diverged_at.is_none());
    }

    #[test]
    fn gradcheck_mlp_passes_in_pass_through() {
        let report = gradcheck(ModelKind::Mlp, &[8, 8, 4], 8, 42).unwrap();
        assert!(
            report.max_relative_deviation < 1e-4,
            "deviation {} at {}",
            report.max_relative_deviation,
            report.worst_role
        );
    }

    #[test]
    fn gradcheck_attention_passes_in_pass_through() {
        let report = gradcheck(ModelKind::Attention, &[8], 6, 9).unwrap();
        assert!(
            report.max_relative_deviation < 1e-4,
            "deviation {} at {}",
            report.max_relative_deviation,
            report.worst_role
        );
    }

    #[test]
    fn gradcheck_quantized_reports_without_asserting() {
        let report = gradcheck_quantized(
            ModelKind::Mlp,
            &[8, 4],
            4,
            1,
            RoleFormats::cfg1(),
            ScaleRoundingMode::RoundUp,
        )
        .unwrap();
        // Deviation bounded by the quantizer step, not by FD truncation;
        // just confirm it is a sane finite number.
        assert!(report.max_relative_deviation.is_finite());
    }

    #[test]
    fn nan_loss_terminates_with_diverged_report() {
        // A wildly high learning rate blows the weights up; the run must
        // end with a Diverged report and keep the trace, not panic or error.
        let cfg = TrainConfig {
            lr: 1000.0,
            steps: 200,
            ..TrainConfig::mlp_demo(
                1,
                QuantMode::Mx {
                    formats: RoleFormats::cfg1(),
                    scale_mode: ScaleRoundingMode::RoundUp,
                },
            )
        };
        let report = train(&cfg).unwrap();
        let step = report.diverged_at.expect("lr=1000 must diverge");
        assert_eq!(report.losses.len(), step + 1);
        assert!(!report.losses[step].is_finite());
    }

    #[test]
    fn attention_quantizes_only_the_linear_gemms() {
        // Softmax and the two batch matmuls stay full precision: the
        // quantization counters must account exactly for the four linears'
        // dual-axis copies of x, w, and g, nothing more.
        let cfg = TrainConfig {
            steps: 1,
            ..TrainConfig::attention_demo(
                4,
                QuantMode::Mx {
                    formats: RoleFormats::cfg1(),
                    scale_mode: ScaleRoundingMode::RoundUp,
                },
            )
        };
        let report = train(&cfg).unwrap();
        let (seq, d) = (cfg.batch as u64, cfg.layer_sizes[0] as u64);
        // Per linear per step: activation (seq x d) twice, weights (d x d)
        // twice, gradients (seq x d) twice.
        let expected = 4 * (2 * seq * d + 2 * d * d + 2 * seq * d);
        assert_eq!(report.stats.n_elements, expected);
    }

    #[test]
    fn config_validation_rejects_bad_setups() {
        let mut cfg = TrainConfig::mlp_demo(1, QuantMode::PassThrough);
        cfg.layer_sizes = vec![16];
        assert!(matches!(cfg.validate(), Err(MxError::InvalidConfig(_))));
        let mut cfg = TrainConfig::mlp_demo(1, QuantMode::PassThrough);
        cfg.steps = 50_000;
        assert!(matches!(cfg.validate(), Err(MxError::InvalidConfig(_))));
        let mut cfg = TrainConfig::attention_demo(1, QuantMode::PassThrough);
        cfg.layer_sizes = vec![16, 16];
        assert!(matches!(cfg.validate(), Err(MxError::InvalidConfig(_))));
        let mut cfg = TrainConfig::mlp_demo(1, QuantMode::PassThrough);
        cfg.n_samples = 100; // not a multiple of batch 32
        assert!(matches!(cfg.validate(), Err(MxError::InvalidConfig(_))));
    }

    #[test]
    fn attention_trains_in_pass_through_and_quantized() {
        let pt = train(&TrainConfig {
            steps: 120,
            ..TrainConfig::attention_demo(2, QuantMode::PassThrough)
        })
        .unwrap();
        assert!(pt.final_loss().unwrap() < pt.losses[0]);
        let qt = train(&TrainConfig {
            steps: 120,
            ..TrainConfig::attention_demo(
                2,
                QuantMode::Mx {
                    formats: RoleFormats::cfg1(),
                    scale_mode: ScaleRoundingMode::RoundUp,
                },
            )
        })
        .unwrap();
        assert!(qt.diverged_at.is_none());
        assert!(qt.final_loss().unwrap() < qt.losses[0]);
    }
}
