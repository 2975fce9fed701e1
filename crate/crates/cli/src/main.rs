//! Command-line front door for the MX toolkit: format reference, tensor
//! quantization, emulated GEMM, rounding-mode analysis, and the training
//! demo. Reports go to standard output; artifacts are written only through
//! --out flags. Identical invocations produce identical outputs.

use clap::{Args, Parser, Subcommand};
use mxfp::analysis::{
    compare_rounding, dtype_sweep, render_sweep_kv, render_sweep_text, seeded_gaussian, RNG_NAME,
};
use mxfp::microtrain::{train, ModelKind, QuantMode, RoleFormats, TrainConfig};
use mxfp::mx_linalg::{
    dequantize_bf16, frobenius_relative_error, mx_matmul, reference_matmul_f64, MmaConfig, MmaPath,
};
use mxfp::tensor_io::{read, write_mx, write_raw, MxtPayload};
use mxfp::{
    dequantize_tensor, quantize_tensor, Axis, FormatKind, MxError, MxTensor, QuantStats,
    ScaleRoundingMode,
};
use ndarray::Array2;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Parser)]
#[command(name = "mxfp", version, about = "Microscaling (MX) block floating-point toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the element-format reference table.
    Formats,
    /// Quantize a raw-f32 MXT file into an MX MXT file.
    Quantize(QuantizeArgs),
    /// Dequantize an MX MXT file back to a raw-f32 MXT file.
    Dequantize(DequantizeArgs),
    /// Multiply two tensors through the MX pipeline and report the error
    /// against a binary64 reference.
    Gemm(GemmArgs),
    /// Quantize under every element format and report per-format statistics.
    Analyze(AnalyzeArgs),
    /// Quantize under both scale-rounding modes and report the differences.
    CompareRounding(CompareArgs),
    /// Train the toy model with quantized GEMMs alongside a binary32
    /// reference run.
    TrainDemo(TrainArgs),
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    format: String,
    #[arg(long, default_value = "row")]
    axis: String,
    #[arg(long = "scale-rounding", default_value = "up")]
    scale_rounding: String,
}

#[derive(Args)]
struct DequantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GemmArgs {
    /// Left operand (raw or mx MXT). Raw inputs are quantized on the fly
    /// row-blocked.
    #[arg(long)]
    a: PathBuf,
    /// Right operand (raw or mx MXT). Raw inputs are quantized on the fly
    /// col-blocked.
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "exact")]
    path: String,
    /// Element format for on-the-fly quantization of raw inputs.
    #[arg(long, default_value = "e4m3")]
    format: String,
    #[arg(long = "scale-rounding", default_value = "up")]
    scale_rounding: String,
    /// Write the binary32 product as a raw MXT file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Raw MXT input; omit to generate a seeded Gaussian tensor.
    #[arg(long = "in", conflicts_with_all = ["rows", "cols", "seed"])]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    rows: usize,
    #[arg(long, default_value_t = 512)]
    cols: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "row")]
    axis: String,
    #[arg(long = "scale-rounding", default_value = "up")]
    scale_rounding: String,
    /// Write the key=value report here (otherwise it follows the text
    /// report on stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long = "in", conflicts_with_all = ["rows", "cols", "seed"])]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    rows: usize,
    #[arg(long, default_value_t = 512)]
    cols: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "e4m3")]
    format: String,
    #[arg(long, default_value = "row")]
    axis: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "mlp")]
    model: String,
    /// passthrough, cfg1 (E4M3 everywhere), or cfg2 (E5M2 gradients).
    #[arg(long, default_value = "cfg1")]
    cfg: String,
    #[arg(long = "scale-rounding", default_value = "up")]
    scale_rounding: String,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the per-step loss trace (two columns: step loss).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the binary32 reference trace.
    #[arg(long = "ref-out")]
    ref_out: Option<PathBuf>,
}

enum CliError {
    User(String),
    Mx(MxError),
}

impl From<MxError> for CliError {
    fn from(e: MxError) -> Self {
        CliError::Mx(e)
    }
}

fn parse_flag<T: FromStr<Err = String>>(flag: &str, value: &str) -> Result<T, CliError> {
    value
        .parse::<T>()
        .map_err(|e| CliError::User(format!("--{flag}: {e}")))
}

fn read_payload(flag: &str, path: &Path) -> Result<MxtPayload, CliError> {
    read(path).map_err(|e| CliError::User(format!("--{flag}: {}: {e}", path.display())))
}

fn read_raw(path: &Path) -> Result<Array2<f32>, CliError> {
    match read_payload("in", path)? {
        MxtPayload::Raw(t) => Ok(t),
        MxtPayload::Mx(_) => Err(CliError::User(format!(
            "--in: {} holds an mx tensor, expected raw f32",
            path.display()
        ))),
    }
}

fn stats_line(stats: &QuantStats) -> String {
    let sqnr = match stats.sqnr_db() {
        Some(db) => format!("{db:.4}"),
        None => "na".into(),
    };
    format!(
        "elements={} saturated={} flushed_to_zero={} exact={} mse={:.6e} sqnr_db={}",
        stats.n_elements,
        stats.n_saturated,
        stats.n_flushed_to_zero,
        stats.n_exact,
        stats.mse(),
        sqnr
    )
}

fn emit_report(text: String, kv: String, out: Option<&Path>) -> Result<(), CliError> {
    print!("{text}");
    match out {
        Some(path) => std::fs::write(path, kv).map_err(MxError::Io)?,
        None => print!("\n{kv}"),
    }
    Ok(())
}

fn load_or_generate(
    input: Option<&Path>,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<(Array2<f32>, String), CliError> {
    match input {
        Some(path) => Ok((
            read_raw(path)?,
            format!("input: file={}", path.display()),
        )),
        None => {
            if rows == 0 || cols == 0 {
                return Err(CliError::User("--rows/--cols must be positive".into()));
            }
            Ok((
                seeded_gaussian(rows, cols, seed),
                format!("input: generated gaussian rng={RNG_NAME} seed={seed} rows={rows} cols={cols}"),
            ))
        }
    }
}

fn cmd_formats() {
    println!(
        "{:<6} {:>12} {:>16} {:>8} {:>10}",
        "name", "destmax", "min_subnormal", "binades", "samples/bin"
    );
    for kind in FormatKind::ALL {
        let f = kind.format();
        println!(
            "{:<6} {:>12} {:>16} {:>8.1} {:>10}",
            kind.to_string(),
            f.destmax,
            f.min_subnormal,
            f.binades(),
            f.samples_per_binade()
        );
    }
}

fn cmd_quantize(args: &QuantizeArgs) -> Result<(), CliError> {
    let format: FormatKind = parse_flag("format", &args.format)?;
    let axis: Axis = parse_flag("axis", &args.axis)?;
    let mode: ScaleRoundingMode = parse_flag("scale-rounding", &args.scale_rounding)?;
    let t = read_raw(&args.input)?;
    let (q, stats) = quantize_tensor(t.view(), axis, format, mode)?;
    write_mx(&args.out, &q)?;
    println!(
        "quantized {}x{} format={format} axis={axis} scale-rounding={mode}",
        q.rows(),
        q.cols()
    );
    println!("{}", stats_line(&stats));
    Ok(())
}

fn cmd_dequantize(args: &DequantizeArgs) -> Result<(), CliError> {
    let q = match read_payload("in", &args.input)? {
        MxtPayload::Mx(q) => q,
        MxtPayload::Raw(_) => {
            return Err(CliError::User(format!(
                "--in: {} holds a raw tensor, expected mx",
                args.input.display()
            )))
        }
    };
    let t = dequantize_tensor(&q);
    write_raw(&args.out, &t)?;
    println!(
        "dequantized {}x{} format={} axis={}",
        q.rows(),
        q.cols(),
        q.format(),
        q.axis()
    );
    Ok(())
}

fn cmd_gemm(args: &GemmArgs) -> Result<(), CliError> {
    let path: MmaPath = parse_flag("path", &args.path)?;
    let format: FormatKind = parse_flag("format", &args.format)?;
    let mode: ScaleRoundingMode = parse_flag("scale-rounding", &args.scale_rounding)?;

    // Raw operands are quantized on the fly along the contraction axis;
    // mx operands are taken as stored (mx_matmul validates their axes).
    let load = |flag: &str, p: &Path, axis: Axis| -> Result<(MxTensor, Array2<f32>), CliError> {
        match read_payload(flag, p)? {
            MxtPayload::Raw(t) => {
                let (q, _) = quantize_tensor(t.view(), axis, format, mode)?;
                Ok((q, t))
            }
            MxtPayload::Mx(q) => {
                let t = dequantize_tensor(&q);
                Ok((q, t))
            }
        }
    };
    let (qa, sa) = load("a", &args.a, Axis::Row)?;
    let (qb, sb) = load("b", &args.b, Axis::Col)?;

    let cfg = MmaConfig {
        path,
        ..MmaConfig::exact()
    };
    let c = mx_matmul(&qa, &qb, &cfg)?;
    let reference = reference_matmul_f64(sa.view(), sb.view());
    let rel = frobenius_relative_error(&c, &reference);

    println!(
        "gemm {}x{} . {}x{} path={} format-a={} format-b={}",
        qa.rows(),
        qa.cols(),
        qb.rows(),
        qb.cols(),
        args.path,
        qa.format(),
        qb.format()
    );
    println!("frobenius_rel_error_vs_f64={rel:.6e}");
    if path == MmaPath::Bf16Emulation {
        let (_, overflows_a) = dequantize_bf16(&qa);
        let (_, overflows_b) = dequantize_bf16(&qb);
        println!("bf16_cast_overflows={}", overflows_a + overflows_b);
    }
    if let Some(out) = &args.out {
        write_raw(out, &c)?;
    }
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let axis: Axis = parse_flag("axis", &args.axis)?;
    let mode: ScaleRoundingMode = parse_flag("scale-rounding", &args.scale_rounding)?;
    let (t, provenance) =
        load_or_generate(args.input.as_deref(), args.rows, args.cols, args.seed)?;
    let entries = dtype_sweep(t.view(), axis, mode)?;
    let mut text = String::new();
    let _ = writeln!(text, "{provenance}");
    let _ = writeln!(text, "axis={axis} scale-rounding={mode}");
    text.push_str(&render_sweep_text(&entries));
    emit_report(text, render_sweep_kv(&entries), args.out.as_deref())
}

fn cmd_compare_rounding(args: &CompareArgs) -> Result<(), CliError> {
    let format: FormatKind = parse_flag("format", &args.format)?;
    let axis: Axis = parse_flag("axis", &args.axis)?;
    let (t, provenance) =
        load_or_generate(args.input.as_deref(), args.rows, args.cols, args.seed)?;
    let cmp = compare_rounding(t.view(), format, axis)?;
    let mut text = String::new();
    let _ = writeln!(text, "{provenance}");
    text.push_str(&cmp.render_text());
    emit_report(text, cmp.render_kv(), args.out.as_deref())
}

fn write_trace(path: &Path, losses: &[f32]) -> Result<(), CliError> {
    let mut s = String::new();
    for (step, loss) in losses.iter().enumerate() {
        let _ = writeln!(s, "{step} {loss:.9e}");
    }
    std::fs::write(path, s).map_err(MxError::Io)?;
    Ok(())
}

fn cmd_train_demo(args: &TrainArgs) -> Result<(), CliError> {
    let model: ModelKind = parse_flag("model", &args.model)?;
    let mode: ScaleRoundingMode = parse_flag("scale-rounding", &args.scale_rounding)?;
    let quant = match args.cfg.as_str() {
        "passthrough" => QuantMode::PassThrough,
        "cfg1" => QuantMode::Mx {
            formats: RoleFormats::cfg1(),
            scale_mode: mode,
        },
        "cfg2" => QuantMode::Mx {
            formats: RoleFormats::cfg2(),
            scale_mode: mode,
        },
        other => {
            return Err(CliError::User(format!(
                "--cfg: expected passthrough, cfg1, or cfg2, got {other:?}"
            )))
        }
    };
    let mut cfg = match model {
        ModelKind::Mlp => TrainConfig::mlp_demo(args.seed, quant),
        ModelKind::Attention => TrainConfig::attention_demo(args.seed, quant),
    };
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    let report = train(&cfg)?;

    println!(
        "train-demo model={} cfg={} scale-rounding={mode} seed={} steps={} rng={RNG_NAME}",
        args.model, args.cfg, args.seed, cfg.steps
    );
    match report.diverged_at {
        Some(step) => println!("diverged at step {step} (trace preserved)"),
        None => {
            let last = report.final_loss().unwrap_or(f32::NAN);
            let reference = report.final_ref_loss().unwrap_or(f32::NAN);
            let rel = ((f64::from(last) - f64::from(reference)) / f64::from(reference)).abs();
            println!("final_loss={last:.6e} ref_final_loss={reference:.6e} rel_diff={rel:.4}");
        }
    }
    println!("quantization: {}", stats_line(&report.stats));
    if let Some(out) = &args.out {
        write_trace(out, &report.losses)?;
    }
    if let Some(ref_out) = &args.ref_out {
        write_trace(ref_out, &report.ref_losses)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Formats => {
            cmd_formats();
            Ok(())
        }
        Cmd::Quantize(args) => cmd_quantize(args),
        Cmd::Dequantize(args) => cmd_dequantize(args),
        Cmd::Gemm(args) => cmd_gemm(args),
        Cmd::Analyze(args) => cmd_analyze(args),
        Cmd::CompareRounding(args) => cmd_compare_rounding(args),
        Cmd::TrainDemo(args) => cmd_train_demo(args),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(&cli) {
        Ok(()) => {}
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
        Err(CliError::Mx(e)) => {
            eprintln!("error: {e}");
            // Errors that can only arise from broken internal plumbing exit
            // with 2; everything reachable from user input exits with 1.
            let code = match e {
                MxError::NonFiniteElement(_)
                | MxError::BlockLengthMismatch(_)
                | MxError::GradCheckFailed { .. } => 2,
                _ => 1,
            };
            std::process::exit(code);
        }
    }
}
