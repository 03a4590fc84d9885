//! `mvt`: dataset generation, training, evaluation, ablation sweeps, and
//! benchmarks for the multi-view transformer crates.
//!
//! Conventions shared by every subcommand:
//! - options resolve flag > config file > default; the effective values
//!   are written to `<out>/config.resolved` before any work starts
//! - logs are `key=value` lines on stderr; results go to stdout or files
//! - commands write only inside their `--out` directory
//! - exit codes: 0 success, 2 bad usage/config, 3 i/o or format, 4
//!   numeric failure

mod config_file;

use clap::{Args, Parser, Subcommand};
use config_file::{load_config_file, Resolver};
use mvt_core::attention::AttnScale;
use mvt_core::checkpoint::load_checkpoint;
use mvt_core::flops::attention_flops;
use mvt_core::model::{MVTConfig, PoolingMode};
use mvt_core::{CoreError, Element, ParamStore};
use mvt_data::{load_manifest, load_split, make_dataset, DataError, DatasetConfig, ViewSet};
use mvt_train::{
    bench, desk_block_grid, evaluate, run_sweep, train_typed, BenchReport, SweepAxis, SweepSpec,
    TimingMode, TrainConfig, TrainError, TrainOutcome,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

// ── errors and exit codes ──

struct AppError {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> AppError {
    AppError {
        code: 2,
        message: message.into(),
    }
}

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Config(_)
        | CoreError::Contract { .. }
        | CoreError::ShapeMismatch { .. }
        | CoreError::BadShape { .. } => 2,
        CoreError::Format(_) | CoreError::Io { .. } => 3,
        CoreError::Numeric { .. } => 4,
    }
}

fn data_code(e: &DataError) -> u8 {
    match e {
        DataError::Config(_) | DataError::Degenerate { .. } => 2,
        DataError::Format(_) | DataError::Io { .. } => 3,
    }
}

fn train_code(e: &TrainError) -> u8 {
    match e {
        TrainError::Config(_) => 2,
        TrainError::Format(_) | TrainError::Io { .. } => 3,
        TrainError::Numeric(_) => 4,
        TrainError::Core(c) => core_code(c),
        TrainError::Data(d) => data_code(d),
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        AppError {
            code: core_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<DataError> for AppError {
    fn from(e: DataError) -> Self {
        AppError {
            code: data_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<TrainError> for AppError {
    fn from(e: TrainError) -> Self {
        AppError {
            code: train_code(&e),
            message: e.to_string(),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> AppError {
    AppError {
        code: 3,
        message: format!("i/o error on {}: {e}", path.display()),
    }
}

// ── command line ──

#[derive(Parser)]
#[command(
    name = "mvt",
    version,
    about = "Multi-view transformer workbench: data, training, sweeps, benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural multi-view silhouette dataset
    GenData(GenDataArgs),
    /// Train a model and keep the best-validation checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on one dataset split
    Eval(EvalArgs),
    /// Run a multi-seed ablation sweep along one axis
    Sweep(SweepArgs),
    /// Report FLOPs, parameters, and measured step times for one config
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Architecture preset: micro, micro-tiny, tiny, or small
    #[arg(long)]
    preset: Option<String>,
    /// Views per sample (overrides the preset, like every field below)
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    img_h: Option<usize>,
    #[arg(long)]
    img_w: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    local_blocks: Option<usize>,
    #[arg(long)]
    global_blocks: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    mlp_ratio: Option<usize>,
    /// class_token or avg_pool
    #[arg(long)]
    pooling: Option<String>,
}

#[derive(Args, Clone)]
struct TrainKnobs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Optimizer/initialization seed
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate every k-th epoch (rows in between repeat the last value)
    #[arg(long)]
    eval_every: Option<usize>,
    /// Stop once validation accuracy reaches this value
    #[arg(long)]
    target_val_acc: Option<f64>,
}

#[derive(Args, Clone)]
struct GenDataArgs {
    /// Dataset directory to create
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config file: key=value with [sections], or a JSON object
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    img_h: Option<usize>,
    #[arg(long)]
    img_w: Option<usize>,
    /// Training split size
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Dataset directory (from gen-data)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for metrics.csv and best.ckpt
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config file: key=value with [sections], or a JSON object
    #[arg(long)]
    config: Option<PathBuf>,
    /// f32 or f64 (default f64)
    #[arg(long)]
    precision: Option<String>,
    /// wall (measure epoch seconds) or off (write 0.000)
    #[arg(long)]
    timing: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    knobs: TrainKnobs,
}

#[derive(Args, Clone)]
struct EvalArgs {
    /// Checkpoint file (best.ckpt from train)
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// train, val, or test
    #[arg(long, default_value = "val")]
    split: String,
    /// f32 or f64; omitted means try f64 then f32
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Args, Clone)]
struct SweepArgs {
    /// Sweep axis: block-split, view-count, or pooling
    #[arg(long)]
    axis: Option<String>,
    /// Dataset directory (from gen-data)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for sweep.csv, summary.csv, and per-cell runs
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config file: key=value with [sections], or a JSON object
    #[arg(long)]
    config: Option<PathBuf>,
    /// f32 or f64 (default f64)
    #[arg(long)]
    precision: Option<String>,
    /// wall (measure epoch seconds) or off (write 0.000)
    #[arg(long)]
    timing: Option<String>,
    /// Total block count S+T for the block-split axis
    #[arg(long)]
    total: Option<usize>,
    /// Comma-separated view counts for the view-count axis
    #[arg(long)]
    view_grid: Option<String>,
    /// Comma-separated training seeds, one run per (cell, seed)
    #[arg(long)]
    seeds: Option<String>,
    /// Continue a partial sweep instead of refusing to overwrite it
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    knobs: TrainKnobs,
}

#[derive(Args, Clone)]
struct BenchArgs {
    /// Config file: key=value with [sections], or a JSON object
    #[arg(long)]
    config: Option<PathBuf>,
    /// Samples per timed phase
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 or f64 (default f64)
    #[arg(long)]
    precision: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
}

// ── option resolution ──

#[derive(Clone, Copy, PartialEq)]
enum Precision {
    F32,
    F64,
}

impl Precision {
    fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

fn make_resolver(config: &Option<PathBuf>) -> Result<Resolver, AppError> {
    match config {
        Some(path) => Ok(Resolver::new(load_config_file(path).map_err(usage)?)),
        None => Ok(Resolver::empty()),
    }
}

fn require<T>(value: Option<T>, what: &str) -> Result<T, AppError> {
    value.ok_or_else(|| usage(format!("{what} is required (flag or config file)")))
}

fn resolve_precision(r: &Resolver, flag: &Option<String>) -> Result<Precision, AppError> {
    match r
        .take("precision", flag.clone())
        .map_err(usage)?
        .as_deref()
    {
        None | Some("f64") => Ok(Precision::F64),
        Some("f32") => Ok(Precision::F32),
        Some(other) => Err(usage(format!(
            "precision must be f32 or f64, got {other:?}"
        ))),
    }
}

fn resolve_timing(r: &Resolver, flag: &Option<String>) -> Result<TimingMode, AppError> {
    match r.take("timing", flag.clone()).map_err(usage)?.as_deref() {
        None | Some("wall") => Ok(TimingMode::Wall),
        Some("off") => Ok(TimingMode::Off),
        Some(other) => Err(usage(format!("timing must be wall or off, got {other:?}"))),
    }
}

fn resolve_model(r: &Resolver, args: &ModelArgs) -> Result<MVTConfig, AppError> {
    let preset = r
        .take("preset", args.preset.clone())
        .map_err(usage)?
        .unwrap_or_else(|| "micro-tiny".to_string());
    let mut cfg = MVTConfig::preset(&preset)?;
    macro_rules! field {
        ($key:literal, $flag:expr, $slot:expr) => {
            if let Some(v) = r.take($key, $flag).map_err(usage)? {
                $slot = v;
            }
        };
    }
    field!("views", args.views, cfg.views);
    field!("img-h", args.img_h, cfg.img_h);
    field!("img-w", args.img_w, cfg.img_w);
    field!("patch", args.patch, cfg.patch);
    field!("dim", args.dim, cfg.dim);
    field!("heads", args.heads, cfg.heads);
    field!("local-blocks", args.local_blocks, cfg.local_blocks);
    field!("global-blocks", args.global_blocks, cfg.global_blocks);
    field!("classes", args.classes, cfg.classes);
    field!("mlp-ratio", args.mlp_ratio, cfg.mlp_ratio);
    if let Some(p) = r.take::<String>("pooling", args.pooling.clone()).map_err(usage)? {
        cfg.pooling = PoolingMode::parse(&p)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_train(r: &Resolver, knobs: &TrainKnobs) -> Result<TrainConfig, AppError> {
    let mut tc = TrainConfig::default();
    macro_rules! field {
        ($key:literal, $flag:expr, $slot:expr) => {
            if let Some(v) = r.take($key, $flag).map_err(usage)? {
                $slot = v;
            }
        };
    }
    field!("epochs", knobs.epochs, tc.epochs);
    field!("batch-size", knobs.batch_size, tc.batch_size);
    field!("lr", knobs.lr, tc.lr);
    field!("beta1", knobs.beta1, tc.beta1);
    field!("beta2", knobs.beta2, tc.beta2);
    field!("weight-decay", knobs.weight_decay, tc.weight_decay);
    field!("eps", knobs.eps, tc.eps);
    field!("seed", knobs.seed, tc.seed);
    field!("eval-every", knobs.eval_every, tc.eval_every);
    if let Some(t) = r
        .take("target-val-acc", knobs.target_val_acc)
        .map_err(usage)?
    {
        tc.target_val_acc = Some(t);
    }
    tc.validate()?;
    Ok(tc)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, AppError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| usage(format!("{what} has invalid entry {s:?}")))
        })
        .collect()
}

// ── config.resolved ──

type Resolved = BTreeMap<String, String>;

fn add_model(map: &mut Resolved, cfg: &MVTConfig) {
    let scale = match cfg.attn_scale {
        AttnScale::PerHead => "per_head",
        AttnScale::FullWidth => "full_width",
    };
    map.insert("model.views".into(), cfg.views.to_string());
    map.insert("model.img-h".into(), cfg.img_h.to_string());
    map.insert("model.img-w".into(), cfg.img_w.to_string());
    map.insert("model.channels".into(), cfg.channels.to_string());
    map.insert("model.patch".into(), cfg.patch.to_string());
    map.insert("model.dim".into(), cfg.dim.to_string());
    map.insert("model.heads".into(), cfg.heads.to_string());
    map.insert("model.local-blocks".into(), cfg.local_blocks.to_string());
    map.insert("model.global-blocks".into(), cfg.global_blocks.to_string());
    map.insert("model.classes".into(), cfg.classes.to_string());
    map.insert("model.mlp-ratio".into(), cfg.mlp_ratio.to_string());
    map.insert("model.attn-scale".into(), scale.to_string());
    map.insert("model.pooling".into(), cfg.pooling.name().to_string());
    map.insert("model.ln-eps".into(), cfg.ln_eps.to_string());
}

fn add_train(map: &mut Resolved, tc: &TrainConfig) {
    map.insert("train.epochs".into(), tc.epochs.to_string());
    map.insert("train.batch-size".into(), tc.batch_size.to_string());
    map.insert("train.lr".into(), tc.lr.to_string());
    map.insert("train.beta1".into(), tc.beta1.to_string());
    map.insert("train.beta2".into(), tc.beta2.to_string());
    map.insert("train.weight-decay".into(), tc.weight_decay.to_string());
    map.insert("train.eps".into(), tc.eps.to_string());
    map.insert("train.seed".into(), tc.seed.to_string());
    map.insert("train.eval-every".into(), tc.eval_every.to_string());
    if let Some(t) = tc.target_val_acc {
        map.insert("train.target-val-acc".into(), t.to_string());
    }
}

fn write_resolved(out: &Path, map: &Resolved) -> Result<(), AppError> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut text = String::new();
    for (k, v) in map {
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    let path = out.join("config.resolved");
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))
}

// ── subcommands ──

fn run_gen_data(args: &GenDataArgs) -> Result<(), AppError> {
    let r = make_resolver(&args.config)?;
    let out = require(r.take("out", args.out.clone()).map_err(usage)?, "--out")?;
    let cfg = DatasetConfig {
        seed: r.take("seed", args.seed).map_err(usage)?.unwrap_or(0),
        views: r.take("views", args.views).map_err(usage)?.unwrap_or(6),
        img_h: r.take("img-h", args.img_h).map_err(usage)?.unwrap_or(32),
        img_w: r.take("img-w", args.img_w).map_err(usage)?.unwrap_or(32),
        train: r.take("train", args.train).map_err(usage)?.unwrap_or(500),
        val: r.take("val", args.val).map_err(usage)?.unwrap_or(100),
        test: r.take("test", args.test).map_err(usage)?.unwrap_or(100),
    };
    cfg.validate()?;

    let mut map = Resolved::new();
    map.insert("command".into(), "gen-data".into());
    map.insert("out".into(), out.display().to_string());
    map.insert("data.seed".into(), cfg.seed.to_string());
    map.insert("data.views".into(), cfg.views.to_string());
    map.insert("data.img-h".into(), cfg.img_h.to_string());
    map.insert("data.img-w".into(), cfg.img_w.to_string());
    map.insert("data.train".into(), cfg.train.to_string());
    map.insert("data.val".into(), cfg.val.to_string());
    map.insert("data.test".into(), cfg.test.to_string());
    write_resolved(&out, &map)?;

    eprintln!(
        "event=gen_data_start out={} seed={} views={} size={}x{}",
        out.display(),
        cfg.seed,
        cfg.views,
        cfg.img_h,
        cfg.img_w
    );
    let manifest = make_dataset(&out, &cfg)?;
    for (name, info) in &manifest.splits {
        println!(
            "split={name} count={} file={} sha256={}",
            info.count, info.file, info.sha256
        );
    }
    eprintln!("event=gen_data_done out={}", out.display());
    Ok(())
}

fn load_train_val(data_dir: &Path) -> Result<(Vec<ViewSet>, Vec<ViewSet>), AppError> {
    let manifest = load_manifest(data_dir)?;
    let train = load_split(data_dir, &manifest, "train")?;
    let val = load_split(data_dir, &manifest, "val")?;
    Ok((train, val))
}

fn train_any(
    prec: Precision,
    cfg: &MVTConfig,
    tc: &TrainConfig,
    train_data: &[ViewSet],
    val_data: &[ViewSet],
    out: &Path,
    timing: TimingMode,
) -> Result<TrainOutcome, TrainError> {
    match prec {
        Precision::F64 => train_typed::<f64>(cfg, tc, train_data, val_data, out, timing),
        Precision::F32 => train_typed::<f32>(cfg, tc, train_data, val_data, out, timing),
    }
}

fn run_train(args: &TrainArgs) -> Result<(), AppError> {
    let r = make_resolver(&args.config)?;
    let data_dir = require(r.take("data", args.data.clone()).map_err(usage)?, "--data")?;
    let out = require(r.take("out", args.out.clone()).map_err(usage)?, "--out")?;
    let cfg = resolve_model(&r, &args.model)?;
    let tc = resolve_train(&r, &args.knobs)?;
    let prec = resolve_precision(&r, &args.precision)?;
    let timing = resolve_timing(&r, &args.timing)?;

    let mut map = Resolved::new();
    map.insert("command".into(), "train".into());
    map.insert("data".into(), data_dir.display().to_string());
    map.insert("out".into(), out.display().to_string());
    map.insert("precision".into(), prec.name().into());
    map.insert(
        "timing".into(),
        if timing == TimingMode::Wall { "wall" } else { "off" }.into(),
    );
    add_model(&mut map, &cfg);
    add_train(&mut map, &tc);
    write_resolved(&out, &map)?;

    let (train_data, val_data) = load_train_val(&data_dir)?;
    eprintln!(
        "event=train_start data={} out={} precision={} params={} epochs={} batch_size={} lr={}",
        data_dir.display(),
        out.display(),
        prec.name(),
        cfg.param_count(),
        tc.epochs,
        tc.batch_size,
        tc.lr
    );
    let outcome = train_any(prec, &cfg, &tc, &train_data, &val_data, &out, timing)?;
    eprintln!(
        "event=train_done epochs_run={} best_val_acc={} best_epoch={} stopped_early={} checkpoint={} metrics={}",
        outcome.history.len(),
        outcome.best_val_acc,
        outcome.best_epoch,
        outcome.stopped_early,
        outcome.checkpoint.display(),
        outcome.metrics_csv.display()
    );
    println!(
        "best_val_acc={} best_epoch={} epochs_run={} stopped_early={}",
        outcome.best_val_acc,
        outcome.best_epoch,
        outcome.history.len(),
        outcome.stopped_early
    );
    Ok(())
}

fn eval_report<T: Element>(
    params: &ParamStore<T>,
    cfg: &MVTConfig,
    data: &[ViewSet],
) -> Result<(), AppError> {
    let report = evaluate(params, cfg, data)?;
    println!(
        "accuracy={} correct={} total={}",
        report.accuracy, report.correct, report.total
    );
    for (klass, row) in report.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        println!("confusion.{klass}={}", cells.join(","));
    }
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<(), AppError> {
    if !matches!(args.split.as_str(), "train" | "val" | "test") {
        return Err(usage(format!(
            "split must be train, val, or test, got {:?}",
            args.split
        )));
    }
    let manifest = load_manifest(&args.data)?;
    let data = load_split(&args.data, &manifest, &args.split)?;
    eprintln!(
        "event=eval_start ckpt={} data={} split={} samples={}",
        args.ckpt.display(),
        args.data.display(),
        args.split,
        data.len()
    );
    match args.precision.as_deref() {
        Some("f64") => {
            let (cfg, params) = load_checkpoint::<f64>(&args.ckpt)?;
            eval_report(&params, &cfg, &data)
        }
        Some("f32") => {
            let (cfg, params) = load_checkpoint::<f32>(&args.ckpt)?;
            eval_report(&params, &cfg, &data)
        }
        Some(other) => Err(usage(format!(
            "precision must be f32 or f64, got {other:?}"
        ))),
        // Stored dtype is unknown until the header is read; try the
        // default precision first, then the other.
        None => match load_checkpoint::<f64>(&args.ckpt) {
            Ok((cfg, params)) => eval_report(&params, &cfg, &data),
            Err(first) => match load_checkpoint::<f32>(&args.ckpt) {
                Ok((cfg, params)) => eval_report(&params, &cfg, &data),
                Err(_) => Err(first.into()),
            },
        },
    }
}

fn run_sweep_cmd(args: &SweepArgs) -> Result<(), AppError> {
    let r = make_resolver(&args.config)?;
    let axis_name = require(r.take("axis", args.axis.clone()).map_err(usage)?, "--axis")?;
    let axis = SweepAxis::parse(&axis_name)?;
    let data_dir = require(r.take("data", args.data.clone()).map_err(usage)?, "--data")?;
    let out = require(r.take("out", args.out.clone()).map_err(usage)?, "--out")?;
    let base = resolve_model(&r, &args.model)?;
    let train = resolve_train(&r, &args.knobs)?;
    let prec = resolve_precision(&r, &args.precision)?;
    let timing = resolve_timing(&r, &args.timing)?;
    let seeds_text = r
        .take("seeds", args.seeds.clone())
        .map_err(usage)?
        .unwrap_or_else(|| "1,2,3".to_string());
    let seeds: Vec<u64> = parse_list(&seeds_text, "--seeds")?;
    let resume = args.resume
        || r.take("resume", None::<bool>)
            .map_err(usage)?
            .unwrap_or(false);

    let (block_grid, view_grid) = match axis {
        SweepAxis::BlockSplit => {
            let total = r.take("total", args.total).map_err(usage)?.unwrap_or(6);
            (desk_block_grid(total), Vec::new())
        }
        SweepAxis::ViewCount => {
            let text = r
                .take("view-grid", args.view_grid.clone())
                .map_err(usage)?
                .unwrap_or_else(|| "1,3,6".to_string());
            (Vec::new(), parse_list(&text, "--view-grid")?)
        }
        SweepAxis::Pooling => (Vec::new(), Vec::new()),
    };

    let spec = SweepSpec {
        axis,
        base,
        train,
        seeds,
        block_grid,
        view_grid,
    };
    spec.validate()?;

    let sweep_csv = out.join("sweep.csv");
    if sweep_csv.exists() && !resume {
        return Err(usage(format!(
            "{} already exists; pass --resume to continue it",
            sweep_csv.display()
        )));
    }

    let mut map = Resolved::new();
    map.insert("command".into(), "sweep".into());
    map.insert("data".into(), data_dir.display().to_string());
    map.insert("out".into(), out.display().to_string());
    map.insert("precision".into(), prec.name().into());
    map.insert(
        "timing".into(),
        if timing == TimingMode::Wall { "wall" } else { "off" }.into(),
    );
    map.insert("sweep.axis".into(), axis.name().to_string());
    map.insert(
        "sweep.seeds".into(),
        spec.seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    map.insert("sweep.resume".into(), resume.to_string());
    match axis {
        SweepAxis::BlockSplit => {
            let grid: Vec<String> = spec
                .block_grid
                .iter()
                .map(|(s, t)| format!("s{s}t{t}"))
                .collect();
            map.insert("sweep.block-grid".into(), grid.join(","));
        }
        SweepAxis::ViewCount => {
            let grid: Vec<String> = spec.view_grid.iter().map(|l| l.to_string()).collect();
            map.insert("sweep.view-grid".into(), grid.join(","));
        }
        SweepAxis::Pooling => {}
    }
    add_model(&mut map, &spec.base);
    add_train(&mut map, &spec.train);
    write_resolved(&out, &map)?;

    let (train_data, val_data) = load_train_val(&data_dir)?;
    eprintln!(
        "event=sweep_start axis={} out={} seeds={} precision={}",
        axis.name(),
        out.display(),
        spec.seeds.len(),
        prec.name()
    );
    let (cells, results) = match prec {
        Precision::F64 => run_sweep::<f64>(&spec, &train_data, &val_data, &out, timing)?,
        Precision::F32 => run_sweep::<f32>(&spec, &train_data, &val_data, &out, timing)?,
    };
    eprintln!(
        "event=sweep_done rows={} cells={} summary={}",
        cells.len(),
        results.len(),
        out.join("summary.csv").display()
    );
    let summary_path = out.join("summary.csv");
    let summary =
        std::fs::read_to_string(&summary_path).map_err(|e| io_err(&summary_path, e))?;
    print!("{summary}");
    Ok(())
}

fn print_bench(report: &BenchReport, prec: Precision) {
    println!("params={}", report.params);
    println!("flops_fwd={}", report.flops.total);
    println!("flops_local={}", report.flops.local_total);
    println!("flops_global={}", report.flops.global_total);
    println!("flops_embed={}", report.flops.embed);
    println!("flops_head={}", report.flops.head);
    println!("samples={}", report.samples);
    println!("precision={}", prec.name());
    println!("forward_seconds={:.6}", report.forward_seconds);
    println!("step_seconds={:.6}", report.step_seconds);
    println!("peak_tape_bytes={}", report.peak_tape_bytes);
}

fn run_bench(args: &BenchArgs) -> Result<(), AppError> {
    let r = make_resolver(&args.config)?;
    let cfg = resolve_model(&r, &args.model)?;
    let samples = r.take("samples", args.samples).map_err(usage)?.unwrap_or(4);
    let seed = r.take("seed", args.seed).map_err(usage)?.unwrap_or(0);
    let prec = resolve_precision(&r, &args.precision)?;
    // Cross-check the analytic counter against the freshly validated
    // config before timing anything.
    let flops = attention_flops(&cfg);
    eprintln!(
        "event=bench_start params={} flops_fwd={} samples={samples} precision={}",
        cfg.param_count(),
        flops.total,
        prec.name()
    );
    let report = match prec {
        Precision::F64 => bench::<f64>(&cfg, samples, seed)?,
        Precision::F32 => bench::<f32>(&cfg, samples, seed)?,
    };
    print_bench(&report, prec);
    Ok(())
}

// ── entry ──

fn check_threads() -> Result<(), AppError> {
    if let Ok(raw) = std::env::var("MVT_THREADS") {
        match raw.trim().parse::<usize>() {
            // Kernels are single-threaded; the env var is an upper bound
            // on workers, and min(n, 1) is always 1.
            Ok(n) if n >= 1 => eprintln!("event=threads requested={n} effective=1"),
            _ => {
                return Err(usage(format!(
                    "MVT_THREADS must be a positive integer, got {raw:?}"
                )))
            }
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), AppError> {
    check_threads()?;
    match &cli.command {
        Command::GenData(args) => run_gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Sweep(args) => run_sweep_cmd(args),
        Command::Bench(args) => run_bench(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("event=error code={} message={:?}", e.code, e.message);
            ExitCode::from(e.code)
        }
    }
}
