//! `wmux`: embed, detect, attack and benchmark multiplexed audio watermarks.
//!
//! Every subcommand prints exactly one JSON line on stdout; diagnostics go
//! to stderr. Exit codes: 0 success, 1 processing failure, 2 bad arguments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use wmux_core::attacks::{attack_apply_with, AttackSpec};
use wmux_core::bench::sweep::SWEEP_KINDS;
use wmux_core::bench::{
    dump_case_study, embed_mode, emit_report, emit_sweep, run_benchmark, strength_sweep, BenchConfig, Mode,
    ReportFormat,
};
use wmux_core::metrics::snr_db;
use wmux_core::mux::Stage;
use wmux_core::patfm::{fuse_scores, FusionWeights};
use wmux_core::{load_wav, save_wav, AudioBuffer, BackendId, Error, Payload, WatermarkKey, WavEncoding};

#[derive(Parser)]
#[command(name = "wmux", version, about = "Audio watermark multiplexing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Watermark a WAV file with one or more backends.
    Embed(EmbedArgs),
    /// Score a WAV file against watermark keys and fuse the detectors.
    Detect(DetectArgs),
    /// Apply one attack to a WAV file.
    Attack(AttackArgs),
    /// Run the mode by attack benchmark and write its reports.
    Bench(BenchArgs),
    /// Sweep one attack's strength and record TPR curves.
    Sweep(SweepArgs),
    /// Dump spectrogram panels of one watermarked and attacked example.
    Case(CaseArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Benchmark/embedding config (TOML); built-in defaults when absent.
    #[arg(long, env = "WMUX_CONFIG")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Marks {
    /// Watermarking mode.
    #[arg(long, default_value = "patfm")]
    mode: Mode,
    /// Backends of the multiplexed modes, in cascade order; the config's
    /// pair when absent. Ignored by the single modes.
    #[arg(long, value_delimiter = ',')]
    backends: Vec<BackendId>,
    /// One key seed per watermark.
    #[arg(long, value_delimiter = ',', required = true)]
    keys: Vec<u64>,
    /// One payload per watermark as an integer; derived from the key when absent.
    #[arg(long, value_delimiter = ',')]
    payloads: Vec<u64>,
    /// Mixing weight of each watermark (non-sequential modes).
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    Float32,
    Pcm16,
}

impl From<Encoding> for WavEncoding {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Float32 => WavEncoding::Float32,
            Encoding::Pcm16 => WavEncoding::Pcm16,
        }
    }
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    marks: Marks,
    #[arg(long, value_enum, default_value = "float32")]
    encoding: Encoding,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Detectors to run; the config's pair when absent.
    #[arg(long, value_delimiter = ',')]
    backends: Vec<BackendId>,
    /// One key seed per detector.
    #[arg(long, value_delimiter = ',', required = true)]
    keys: Vec<u64>,
    /// Fusion weights, normalized to sum to one; uniform when absent.
    #[arg(long, value_delimiter = ',')]
    fusion_weights: Vec<f64>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct AttackSel {
    /// Attack kind, e.g. `gaussian_noise` or `echo`.
    #[arg(long)]
    kind: String,
    /// Attack parameters as `name=value` pairs, e.g. `delay_ms=100,gain=0.3`.
    #[arg(long, default_value = "")]
    params: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    attack: AttackSel,
    #[arg(long, value_enum, default_value = "float32")]
    encoding: Encoding,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    jobs: Option<usize>,
    /// Report directory; the config's `output_dir` when absent.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SWEEP_KINDS))]
    attack: String,
    /// Attack strengths; 0 is the clean condition.
    #[arg(long, value_delimiter = ',', required = true)]
    strengths: Vec<f64>,
    /// Modes to sweep; the config's modes when absent.
    #[arg(long, value_delimiter = ',')]
    modes: Vec<Mode>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CaseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    marks: Marks,
    #[command(flatten)]
    attack: AttackSel,
    #[command(flatten)]
    config: ConfigArg,
}

/// Failure with its exit code.
enum Failure {
    Usage(String),
    Processing(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Processing(e.to_string()),
        }
    }
}

type Outcome = Result<Value, Failure>;

fn load_config(arg: &ConfigArg) -> Result<BenchConfig, Failure> {
    match &arg.config {
        Some(path) => Ok(BenchConfig::load(path)?),
        None => Ok(BenchConfig::default()),
    }
}

fn snr_value(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!("inf")
    }
}

fn paths(p: &[PathBuf]) -> Vec<String> {
    p.iter().map(|p| p.display().to_string()).collect()
}

/// Backends of the watermarks `marks` describes.
fn mark_backends(marks: &Marks, cfg: &BenchConfig) -> Vec<BackendId> {
    match marks.mode.single() {
        Some(b) => vec![b],
        None if marks.backends.is_empty() => cfg.backends.clone(),
        None => marks.backends.clone(),
    }
}

fn stages(marks: &Marks, cfg: &BenchConfig) -> Result<Vec<Stage>, Failure> {
    let backends = mark_backends(marks, cfg);
    if marks.keys.len() != backends.len() {
        return Err(Failure::Usage(format!("{} keys for {} watermarks", marks.keys.len(), backends.len())));
    }
    if !marks.payloads.is_empty() && marks.payloads.len() != backends.len() {
        return Err(Failure::Usage(format!(
            "{} payloads for {} watermarks",
            marks.payloads.len(),
            backends.len()
        )));
    }
    backends
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let payload = match marks.payloads.get(i) {
                Some(&v) => Payload::from_u64(v, cfg.payload_bits)?,
                None => Payload::random(marks.keys[i], cfg.payload_bits)?,
            };
            Ok(Stage {
                backend: b,
                payload,
                key: WatermarkKey::new(marks.keys[i], b),
                strength: cfg.strengths.of(b),
            })
        })
        .collect()
}

fn watermark(x: &AudioBuffer, marks: &Marks, cfg: &mut BenchConfig) -> Result<(AudioBuffer, usize), Failure> {
    if let Some(a) = marks.alpha {
        cfg.mux_alpha = a;
    }
    let stages = stages(marks, cfg)?;
    let out = embed_mode(x, marks.mode, &stages, cfg)?;
    Ok((out.audio, out.clipped))
}

fn parse_value(v: &str) -> Value {
    if let Ok(i) = v.parse::<i64>() {
        json!(i)
    } else if let Ok(f) = v.parse::<f64>() {
        json!(f)
    } else {
        json!(v)
    }
}

fn attack_spec(sel: &AttackSel) -> Result<AttackSpec, Failure> {
    let mut obj = Map::new();
    obj.insert("kind".into(), json!(sel.kind));
    for pair in sel.params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("attack parameter `{pair}` is not name=value")))?;
        obj.insert(k.trim().into(), parse_value(v.trim()));
    }
    let spec: AttackSpec = serde_json::from_value(Value::Object(obj))
        .map_err(|e| Failure::Usage(format!("attack `{}`: {e}", sel.kind)))?;
    spec.validate()?;
    Ok(spec)
}

fn cmd_embed(a: EmbedArgs) -> Outcome {
    let mut cfg = load_config(&a.config)?;
    let x = load_wav(&a.input)?;
    let (y, clipped) = watermark(&x, &a.marks, &mut cfg)?;
    save_wav(&y, &a.out, a.encoding.into())?;
    Ok(json!({
        "command": "embed",
        "out": a.out.display().to_string(),
        "mode": a.marks.mode.as_str(),
        "backends": mark_backends(&a.marks, &cfg),
        "snr_db": snr_value(snr_db(&x, &y)?),
        "clipped": clipped,
    }))
}

fn cmd_detect(a: DetectArgs) -> Outcome {
    let cfg = load_config(&a.config)?;
    let backends = if a.backends.is_empty() { cfg.backends.clone() } else { a.backends.clone() };
    if a.keys.len() != backends.len() {
        return Err(Failure::Usage(format!("{} keys for {} detectors", a.keys.len(), backends.len())));
    }
    let weights = if a.fusion_weights.is_empty() {
        FusionWeights::uniform(backends.len())?
    } else if a.fusion_weights.len() != backends.len() {
        return Err(Failure::Usage(format!(
            "{} fusion weights for {} detectors",
            a.fusion_weights.len(),
            backends.len()
        )));
    } else {
        FusionWeights::new(a.fusion_weights.clone())?
    };
    let y = load_wav(&a.input)?;
    let mut scores = Vec::new();
    let mut per = Map::new();
    for (&b, &k) in backends.iter().zip(&a.keys) {
        let s = b.detect(&y, &WatermarkKey::new(k, b))?;
        per.insert(b.as_str().into(), json!({ "raw": s.raw, "z": s.z, "logit": s.logit }));
        scores.push(s);
    }
    let fused = fuse_scores(&scores, &weights)?;
    Ok(json!({
        "command": "detect",
        "detectors": per,
        "fused": { "logit": fused.logit, "weights": weights.weights() },
    }))
}

fn cmd_attack(a: AttackArgs) -> Outcome {
    let cfg = load_config(&a.config)?;
    let spec = attack_spec(&a.attack)?;
    let x = load_wav(&a.input)?;
    let y = attack_apply_with(&x, &spec, a.attack.seed, &cfg.codec_context()?)?;
    save_wav(&y, &a.out, a.encoding.into())?;
    let snr = if x.len() == y.len() && x.energy() > 0.0 { snr_value(snr_db(&x, &y)?) } else { Value::Null };
    Ok(json!({
        "command": "attack",
        "out": a.out.display().to_string(),
        "attack": spec.label(),
        "snr_db": snr,
    }))
}

fn report_formats(f: Format) -> Vec<ReportFormat> {
    match f {
        Format::Csv => vec![ReportFormat::Csv],
        Format::Json => vec![ReportFormat::Json],
        Format::Both => vec![ReportFormat::Csv, ReportFormat::Json],
    }
}

fn cmd_bench(a: BenchArgs) -> Outcome {
    let mut cfg = load_config(&a.config)?;
    if a.jobs.is_some() {
        cfg.jobs = a.jobs;
    }
    cfg.validate()?;
    let out_dir = a.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let report = run_benchmark(&cfg)?;
    let mut files = Vec::new();
    for f in report_formats(a.format) {
        files.extend(emit_report(&report, f, &out_dir)?);
    }
    let failed: usize = report.modes.iter().map(|m| m.failed_cells).sum();
    for c in &report.cells {
        if let wmux_core::bench::CellOutcome::Failed { reason } = &c.outcome {
            eprintln!("cell {} / {} failed: {reason}", c.mode, c.attack);
        }
    }
    Ok(json!({
        "command": "bench",
        "files": paths(&files),
        "cells": report.cells.len(),
        "failed_cells": failed,
        "config_hash": report.config_hash,
    }))
}

fn cmd_sweep(a: SweepArgs) -> Outcome {
    let mut cfg = load_config(&a.config)?;
    if a.jobs.is_some() {
        cfg.jobs = a.jobs;
    }
    if !a.modes.is_empty() {
        cfg.modes = a.modes.clone();
    }
    cfg.validate()?;
    let out_dir = a.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let sweep = strength_sweep(&cfg, &a.attack, &a.strengths)?;
    let files = emit_sweep(&sweep, &out_dir)?;
    Ok(json!({
        "command": "sweep",
        "attack": a.attack,
        "points": sweep.points.len(),
        "files": paths(&files),
    }))
}

fn cmd_case(a: CaseArgs) -> Outcome {
    let mut cfg = load_config(&a.config)?;
    let spec = attack_spec(&a.attack)?;
    let x = load_wav(&a.input)?;
    let (y, _) = watermark(&x, &a.marks, &mut cfg)?;
    let attacked = attack_apply_with(&y, &spec, a.attack.seed, &cfg.codec_context()?)?;
    if attacked.len() != y.len() {
        return Err(Failure::Processing(format!(
            "attack `{}` changed the length from {} to {} samples",
            spec.label(),
            y.len(),
            attacked.len()
        )));
    }
    let files = dump_case_study(&x, &y, &attacked, &a.out_dir)?;
    Ok(json!({
        "command": "case",
        "attack": spec.label(),
        "files": paths(&files),
    }))
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Embed(a) => cmd_embed(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Case(a) => cmd_case(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Processing(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
