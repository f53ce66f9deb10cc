//! `nowcast`: synthesize gridded precipitation sequences, train nowcasting
//! models and baselines, verify gradients, and score forecasts.
//!
//! Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 data-contract
//! failure, 5 gradient-check failure.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use manifest::{default_manifest_path, Manifest};
use nowcast_core::baselines::{lr_fit_samples, pixel_rows, rf_fit, RfConfig};
use nowcast_core::evaluation::{
    evaluate, feedback_forecast, frame_to_pgm, AnyForecaster, EvalConfig, FeedbackConfig,
};
use nowcast_core::gradcheck;
use nowcast_core::grid::{
    frames_to_model_tensor, model_tensor_to_frames, read_sequence, synthesize, window,
    write_sequence, Sample, Sequence, SynthConfig, WindowConfig,
};
use nowcast_core::models::{Model, ModelConfig, ModelKind};
use nowcast_core::nn::{Checkpoint, RngState};
use nowcast_core::training::{train, AdamHyper, TrainConfig};
use nowcast_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "nowcast", version, about = "Gridded precipitation nowcasting at desk scale")]
struct Cli {
    /// Cap the worker pool (results are identical for any thread count).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic advection sequence as an NCG file.
    Synth(SynthArgs),
    /// Train a network or baseline on NCG sequences.
    Train(TrainArgs),
    /// Score a checkpoint against test sequences, lead time by lead time.
    Evaluate(EvaluateArgs),
    /// Predict future frames from a single input window.
    Forecast(ForecastArgs),
    /// Run the finite-difference gradient verification suites.
    Gradcheck(GradcheckArgs),
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected min,max (got '{}')", s))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad number '{}'", lo))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad number '{}'", hi))?;
    Ok((lo, hi))
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, alias = "h", default_value_t = 64)]
    height: usize,
    #[arg(long, alias = "w", default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 40)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    cells: usize,
    /// Peak cell intensity range, mm/h.
    #[arg(long, value_parser = parse_range, default_value = "2,8")]
    intensity: (f64, f64),
    /// Cell speed range, pixels per frame.
    #[arg(long, value_parser = parse_range, default_value = "0.3,1.2")]
    velocity: (f64, f64),
    /// Exponential growth-rate range per frame.
    #[arg(long, value_parser = parse_range, default_value = "-0.02,0.02", allow_hyphen_values = true)]
    growth: (f64, f64),
    /// Additive Gaussian noise standard deviation, mm/h.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 1800)]
    dt: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// cnc | cnc-r | cnc-d | rnc | rnc-r | lr | rf
    #[arg(long)]
    model: String,
    /// NCG training sequences (repeatable).
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// History CSV path (default: `<out>.history.csv`).
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    /// Early-stop patience in epochs without validation improvement.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, default_value_t = 9)]
    n_in: usize,
    #[arg(long, default_value_t = 3)]
    n_out: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 8)]
    base_channels: usize,
    #[arg(long, default_value_t = 8)]
    hidden_channels: usize,
    #[arg(long, default_value_t = 2)]
    rnc_layers: usize,
    /// Gate the previous cell state with the output gate (literal variant).
    #[arg(long)]
    eq5_literal: bool,
    /// Ridge regularizer for the linear-regression baseline.
    #[arg(long, default_value_t = 1e-6)]
    lambda: f64,
    #[arg(long, default_value_t = 20)]
    trees: usize,
    #[arg(long, default_value_t = 8)]
    max_depth: usize,
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    #[arg(long, default_value_t = 3)]
    feature_subset: usize,
    /// Pixel-row cap for the random-forest fit (seeded subsample).
    #[arg(long, default_value_t = 200_000)]
    rf_max_rows: usize,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// NCG test sequences (repeatable).
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    /// Rain / no-rain threshold, mm/h.
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    #[arg(long, default_value_t = 1)]
    feedback_cycles: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Use the literal BIAS difference quotient and estimate-mean R^2.
    #[arg(long)]
    appendix_literal: bool,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write one PGM frame dump per (sample, lead).
    #[arg(long)]
    dump_pgm: bool,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// NCG file holding exactly one input window.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    cycles: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Restrict to families whose name contains this substring.
    #[arg(long)]
    only: Option<String>,
    /// Write the per-family CSV report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = nowcast_core::configure_threads(n) {
            eprintln!("error: {}", e);
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Forecast(args) => cmd_forecast(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {:#}", err);
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Stable exit-code mapping for failures surfaced through core errors.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Config(_) => 2,
                CoreError::Numeric(_) => 3,
                _ => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    4
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode> {
    let mut manifest = Manifest::new("synth");
    let cfg = SynthConfig {
        height: args.height,
        width: args.width,
        n_frames: args.frames,
        n_cells: args.cells,
        intensity_range: args.intensity,
        velocity_range: args.velocity,
        growth_rate_range: args.growth,
        noise_std: args.noise,
        dt_seconds: args.dt,
        seed: args.seed,
    };
    let seq = synthesize(&cfg)?;
    write_sequence(&seq, &args.out)?;
    manifest.set("height", args.height);
    manifest.set("width", args.width);
    manifest.set("frames", args.frames);
    manifest.set("cells", args.cells);
    manifest.set("intensity", format!("{},{}", args.intensity.0, args.intensity.1));
    manifest.set("velocity", format!("{},{}", args.velocity.0, args.velocity.1));
    manifest.set("growth", format!("{},{}", args.growth.0, args.growth.1));
    manifest.set("noise", args.noise);
    manifest.set("dt", args.dt);
    manifest.set("seed", args.seed);
    manifest.artifact("out", &args.out)?;
    manifest.write(&args.manifest.unwrap_or_else(|| default_manifest_path(&args.out)))?;
    println!(
        "wrote {} ({} frames of {}x{})",
        args.out.display(),
        seq.len(),
        seq.height(),
        seq.width()
    );
    Ok(ExitCode::SUCCESS)
}

/// Loads any checkpoint kind; the literal path "bm" selects the built-in
/// parameter-free persistence benchmark.
fn load_forecaster(path: &Path) -> Result<AnyForecaster> {
    if path.as_os_str() == "bm" {
        let ck = nowcast_core::evaluation::bm_checkpoint(9, 3);
        return Ok(AnyForecaster::from_checkpoint(&ck)?);
    }
    let ck = Checkpoint::load(path)?;
    Ok(AnyForecaster::from_checkpoint(&ck)?)
}

fn load_samples(paths: &[PathBuf], wc: &WindowConfig) -> Result<(Vec<Sample>, Vec<Sequence>)> {
    let mut samples = Vec::new();
    let mut seqs = Vec::new();
    for path in paths {
        let seq = read_sequence(path).with_context(|| format!("reading {}", path.display()))?;
        samples.extend(window(&seq, wc)?);
        seqs.push(seq);
    }
    Ok((samples, seqs))
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let mut manifest = Manifest::new("train");
    let kind = args.model.to_ascii_lowercase();
    if kind == "bm" {
        return Err(anyhow!(CoreError::Config(
            "the persistence benchmark has no trainable parameters".into(),
        )));
    }
    let wc = WindowConfig {
        n_in: args.n_in,
        n_out: args.n_out,
        stride: args.stride,
    };
    let (samples, _) = load_samples(&args.input, &wc)?;
    if samples.is_empty() {
        return Err(anyhow!(CoreError::Data(format!(
            "no training samples: sequences shorter than n_in + n_out = {}",
            args.n_in + args.n_out
        ))));
    }
    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| args.out.with_extension("history.csv"));

    let empty_history = String::from("epoch,train_loss,val_loss,seconds,clip_events\n");
    let (checkpoint, history_csv) = match kind.as_str() {
        "lr" => {
            let model = lr_fit_samples(&samples, args.lambda)?;
            (model.to_checkpoint(), empty_history)
        }
        "rf" => {
            let rows = pixel_rows(&samples, Some(args.rf_max_rows), args.seed)?;
            let model = rf_fit(
                &rows,
                &RfConfig {
                    n_trees: args.trees,
                    max_depth: args.max_depth,
                    min_samples_leaf: args.min_leaf,
                    feature_subset: args.feature_subset,
                    seed: args.seed,
                },
            )?;
            (model.to_checkpoint(), empty_history)
        }
        _ => {
            let model_kind: ModelKind = kind.parse().map_err(anyhow::Error::from)?;
            let mut cfg = ModelConfig::new(model_kind);
            cfg.depth = args.depth;
            cfg.base_channels = args.base_channels;
            cfg.hidden_channels = args.hidden_channels;
            cfg.rnc_layers = args.rnc_layers;
            cfg.eq5_literal = args.eq5_literal;
            cfg.n_in = args.n_in;
            cfg.n_out = args.n_out;
            let (h, w) = (samples[0].height(), samples[0].width());
            let mut rng = RngState::new(args.seed).split(0x1217);
            let mut model = Model::new(&cfg, h, w, &mut rng)?;
            let tc = TrainConfig {
                batch_size: args.batch,
                epochs: args.epochs,
                seed: args.seed,
                val_fraction: args.val_frac,
                patience: args.patience,
                clip_norm: None,
            };
            let hyper = AdamHyper {
                lr: args.lr,
                ..AdamHyper::default()
            };
            let history = train(&mut model, &samples, &tc, &hyper)?;
            if let Some(last) = history.rows.last() {
                println!(
                    "trained {} epochs: train_loss {:.6}, val_loss {}",
                    history.rows.len(),
                    last.train_loss,
                    last.val_loss
                        .map(|v| format!("{:.6}", v))
                        .unwrap_or_else(|| "NA".into())
                );
            }
            (model.to_checkpoint(), history.to_csv())
        }
    };
    checkpoint.save(&args.out)?;
    fs::write(&history_path, history_csv)?;
    manifest.set("model", &kind);
    manifest.set("epochs", args.epochs);
    manifest.set("lr", format!("{:e}", args.lr));
    manifest.set("batch", args.batch);
    manifest.set("seed", args.seed);
    manifest.set("val_frac", args.val_frac);
    manifest.set("n_in", args.n_in);
    manifest.set("n_out", args.n_out);
    manifest.set("samples", samples.len());
    for input in &args.input {
        manifest.set("input", input.display());
    }
    manifest.artifact("checkpoint", &args.out)?;
    manifest.artifact("history", &history_path)?;
    manifest.write(&args.manifest.unwrap_or_else(|| default_manifest_path(&args.out)))?;
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let mut manifest = Manifest::new("evaluate");
    let mut forecaster = load_forecaster(&args.checkpoint)?;
    let kind_tag = forecaster.kind_tag();
    let f = forecaster.as_forecaster();
    let (n_in, n_out) = (f.input_len(), f.output_len());
    let needed = n_in + args.feedback_cycles * n_out;
    let wc = WindowConfig {
        n_in,
        n_out: args.feedback_cycles * n_out,
        stride: args.stride,
    };
    let (samples, seqs) = load_samples(&args.data, &wc)?;
    if samples.is_empty() {
        let longest = seqs.iter().map(Sequence::len).max().unwrap_or(0);
        return Err(anyhow!(CoreError::Data(format!(
            "lead range needs sequences of at least {} frames; the longest input has {} (short by {})",
            needed,
            longest,
            needed.saturating_sub(longest)
        ))));
    }
    let cfg = EvalConfig {
        threshold: args.threshold,
        feedback: FeedbackConfig {
            cycles: args.feedback_cycles,
        },
        dt_seconds: seqs[0].dt_seconds,
        appendix_literal: args.appendix_literal,
    };
    let out = evaluate(f, &samples, &cfg)?;
    fs::create_dir_all(&args.out_dir)?;
    let pooled_path = args.out_dir.join("metrics_pooled.csv");
    let per_sample_path = args.out_dir.join("metrics_per_sample.csv");
    fs::write(&pooled_path, out.pooled.to_csv())?;
    fs::write(
        &per_sample_path,
        nowcast_core::evaluation::per_sample_csv(&out.per_sample),
    )?;
    if args.dump_pgm {
        let pgm_dir = args.out_dir.join("pgm");
        fs::create_dir_all(&pgm_dir)?;
        for (si, sample) in samples.iter().enumerate() {
            if sample.target.len() < wc.n_out {
                continue;
            }
            let x = frames_to_model_tensor(&sample.input)?;
            let pred = feedback_forecast(f, &x, &cfg.feedback)?;
            let frames = model_tensor_to_frames(&pred, 0, cfg.dt_seconds)?;
            for (lead, frame) in frames.iter().enumerate() {
                let minutes = (lead as u32 + 1) * cfg.dt_seconds / 60;
                let bytes = frame_to_pgm(frame.values(), frame.height(), frame.width())?;
                fs::write(
                    pgm_dir.join(format!("sample{:04}_lead{:03}.pgm", si, minutes)),
                    bytes,
                )?;
            }
        }
    }
    for l in &out.pooled.leads {
        println!("lead {:3} min: mse {:.5}  n={}", l.lead_minutes, l.mse, l.n_samples);
    }
    if out.pooled.skipped > 0 {
        println!("skipped {} samples with short targets", out.pooled.skipped);
    }
    manifest.set("checkpoint", args.checkpoint.display());
    manifest.set("kind", kind_tag);
    manifest.set("threshold", args.threshold);
    manifest.set("feedback_cycles", args.feedback_cycles);
    manifest.set("appendix_literal", args.appendix_literal);
    manifest.set("samples", samples.len());
    for d in &args.data {
        manifest.set("data", d.display());
    }
    manifest.artifact("metrics_pooled", &pooled_path)?;
    manifest.artifact("metrics_per_sample", &per_sample_path)?;
    manifest.write(
        &args
            .manifest
            .unwrap_or_else(|| args.out_dir.join("run.manifest")),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_forecast(args: ForecastArgs) -> Result<ExitCode> {
    let mut manifest = Manifest::new("forecast");
    let mut forecaster = load_forecaster(&args.checkpoint)?;
    let kind_tag = forecaster.kind_tag();
    let f = forecaster.as_forecaster();
    let seq = read_sequence(&args.input)?;
    if seq.len() != f.input_len() {
        return Err(anyhow!(CoreError::Data(format!(
            "input holds {} frames; the model consumes exactly {}",
            seq.len(),
            f.input_len()
        ))));
    }
    let x = frames_to_model_tensor(seq.frames())?;
    let pred = feedback_forecast(f, &x, &FeedbackConfig { cycles: args.cycles })?;
    let last_ts = seq.frames().last().map(|fr| fr.timestamp).unwrap_or(0);
    let frames = model_tensor_to_frames(&pred, last_ts + seq.dt_seconds as i64, seq.dt_seconds)?;
    let out_seq = Sequence::new(frames, seq.dt_seconds)?;
    write_sequence(&out_seq, &args.out)?;
    manifest.set("checkpoint", args.checkpoint.display());
    manifest.set("kind", kind_tag);
    manifest.set("input", args.input.display());
    manifest.set("cycles", args.cycles);
    manifest.artifact("out", &args.out)?;
    manifest.write(&args.manifest.unwrap_or_else(|| default_manifest_path(&args.out)))?;
    println!("wrote {} ({} predicted frames)", args.out.display(), out_seq.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let report = gradcheck::run_all(args.seed, args.only.as_deref())?;
    print!("{}", report.to_csv());
    if let Some(path) = &args.out {
        fs::write(path, report.to_csv())?;
        let mut manifest = Manifest::new("gradcheck");
        manifest.set("seed", args.seed);
        if let Some(only) = &args.only {
            manifest.set("only", only);
        }
        manifest.artifact("report", path)?;
        manifest.write(&default_manifest_path(path))?;
    }
    if report.all_passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        let names: Vec<&str> = report.failures().iter().map(|f| f.name.as_str()).collect();
        eprintln!("gradient check failed: {}", names.join(", "));
        Ok(ExitCode::from(5))
    }
}
