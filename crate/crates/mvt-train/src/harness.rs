//! Ablation sweeps over block split, view count, and pooling mode, plus
//! a forward/step benchmark. Sweeps persist one CSV row per trained
//! cell and resume by skipping rows already present.

use crate::error::{Result, TrainError};
use crate::optim::TrainConfig;
use crate::trainer::{train_typed, TimingMode};
use mvt_core::flops::{attention_flops, FlopCounts};
use mvt_core::model::{
    forward_loaded, init_params, load_model, MVTConfig, PoolingMode,
};
use mvt_core::{Element, Tape};
use mvt_data::ViewSet;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

pub const SWEEP_HEADER: &str =
    "axis,cell_id,seed,S,T,L,pooling,val_acc,train_seconds,flops_fwd,params";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    BlockSplit,
    ViewCount,
    Pooling,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::BlockSplit => "block-split",
            SweepAxis::ViewCount => "view-count",
            SweepAxis::Pooling => "pooling",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "block-split" => Ok(SweepAxis::BlockSplit),
            "view-count" => Ok(SweepAxis::ViewCount),
            "pooling" => Ok(SweepAxis::Pooling),
            other => Err(TrainError::Config(format!(
                "unknown sweep axis {other:?}, expected block-split, view-count, or pooling"
            ))),
        }
    }
}

/// The desk-scale block grid for a fixed total depth: every (S, T) split
/// except the one leaving a single local block, mirroring the shape of
/// the reference grid (at total 6: T in 0,1,2,3,4,6).
pub fn desk_block_grid(total: usize) -> Vec<(usize, usize)> {
    (0..=total)
        .filter(|&t| t != total.saturating_sub(1) || total == 1)
        .map(|t| (total - t, t))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    /// Architecture template; the swept field is overridden per cell.
    pub base: MVTConfig,
    pub train: TrainConfig,
    /// One training run per (cell, seed); the optimizer/init seed.
    pub seeds: Vec<u64>,
    /// (S, T) cells for the block-split axis.
    pub block_grid: Vec<(usize, usize)>,
    /// View counts for the view-count axis, subsampled from the rendered
    /// circuit.
    pub view_grid: Vec<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(TrainError::Config("sweep needs at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(TrainError::Config("sweep seeds must be distinct".into()));
        }
        match self.axis {
            SweepAxis::BlockSplit => {
                if self.block_grid.is_empty() {
                    return Err(TrainError::Config("block-split grid is empty".into()));
                }
                let total = self.block_grid[0].0 + self.block_grid[0].1;
                if let Some(&(s, t)) =
                    self.block_grid.iter().find(|&&(s, t)| s + t != total)
                {
                    return Err(TrainError::Config(format!(
                        "block-split grid must keep S+T constant: ({s},{t}) breaks total {total}"
                    )));
                }
            }
            SweepAxis::ViewCount => {
                if self.view_grid.is_empty() {
                    return Err(TrainError::Config("view-count grid is empty".into()));
                }
                if self.view_grid.contains(&0) {
                    return Err(TrainError::Config("view counts must be positive".into()));
                }
            }
            SweepAxis::Pooling => {}
        }
        Ok(())
    }
}

/// One trained cell: the flat CSV row of the sweep log.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub axis: SweepAxis,
    pub cell_id: String,
    pub seed: u64,
    pub s: usize,
    pub t: usize,
    pub l: usize,
    pub pooling: PoolingMode,
    pub val_acc: f64,
    pub train_seconds: f64,
    pub flops_fwd: u64,
    pub params: usize,
}

impl SweepCell {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3},{},{}",
            self.axis.name(),
            self.cell_id,
            self.seed,
            self.s,
            self.t,
            self.l,
            self.pooling.name(),
            self.val_acc,
            self.train_seconds,
            self.flops_fwd,
            self.params
        )
    }

    fn parse_csv_row(line: &str) -> Result<SweepCell> {
        let bad = |what: &str| {
            TrainError::Format(format!("sweep.csv row {line:?}: {what}"))
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(bad("expected 11 fields"));
        }
        Ok(SweepCell {
            axis: SweepAxis::parse(fields[0])?,
            cell_id: fields[1].to_string(),
            seed: fields[2].parse().map_err(|_| bad("bad seed"))?,
            s: fields[3].parse().map_err(|_| bad("bad S"))?,
            t: fields[4].parse().map_err(|_| bad("bad T"))?,
            l: fields[5].parse().map_err(|_| bad("bad L"))?,
            pooling: PoolingMode::parse(fields[6])?,
            val_acc: fields[7].parse().map_err(|_| bad("bad val_acc"))?,
            train_seconds: fields[8].parse().map_err(|_| bad("bad train_seconds"))?,
            flops_fwd: fields[9].parse().map_err(|_| bad("bad flops_fwd"))?,
            params: fields[10].parse().map_err(|_| bad("bad params"))?,
        })
    }
}

/// Per-cell aggregate over the seed repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cell_id: String,
    pub s: usize,
    pub t: usize,
    pub l: usize,
    pub pooling: PoolingMode,
    pub mean_val_acc: f64,
    pub min_val_acc: f64,
    pub max_val_acc: f64,
    pub mean_train_seconds: f64,
    pub flops_fwd: u64,
    pub params: usize,
    /// Flags the argmax-mean-accuracy row; ties keep the earliest cell.
    pub is_best: bool,
}

pub const SUMMARY_HEADER: &str = "axis,cell_id,S,T,L,pooling,mean_val_acc,min_val_acc,\
max_val_acc,mean_train_seconds,flops_fwd,params,best";

/// A cell before training: its id and the config overrides it implies.
#[derive(Debug, Clone)]
struct CellPlan {
    cell_id: String,
    config: MVTConfig,
    /// View subsampling target, when the axis sweeps views.
    take_views: Option<usize>,
}

fn plan_cells(spec: &SweepSpec) -> Vec<CellPlan> {
    match spec.axis {
        SweepAxis::BlockSplit => {
            let mut grid = spec.block_grid.clone();
            grid.sort_by_key(|&(_, t)| t);
            grid.iter()
                .map(|&(s, t)| CellPlan {
                    cell_id: format!("s{s}t{t}"),
                    config: MVTConfig {
                        local_blocks: s,
                        global_blocks: t,
                        ..spec.base.clone()
                    },
                    take_views: None,
                })
                .collect()
        }
        SweepAxis::ViewCount => {
            let mut grid = spec.view_grid.clone();
            grid.sort_unstable();
            grid.dedup();
            grid.iter()
                .map(|&l| CellPlan {
                    cell_id: format!("l{l}"),
                    config: MVTConfig {
                        views: l,
                        ..spec.base.clone()
                    },
                    take_views: Some(l),
                })
                .collect()
        }
        SweepAxis::Pooling => [PoolingMode::ClassToken, PoolingMode::AvgPool]
            .into_iter()
            .map(|pooling| CellPlan {
                cell_id: pooling.name().to_string(),
                config: MVTConfig {
                    pooling,
                    ..spec.base.clone()
                },
                take_views: None,
            })
            .collect(),
    }
}

/// Keep `target` of the sample's views, spaced uniformly around the
/// rendered circuit (indices floor(k*rendered/target)).
pub fn subsample_views(sample: &ViewSet, target: usize) -> Result<ViewSet> {
    let rendered = sample.views.len();
    if target == 0 || target > rendered {
        return Err(TrainError::Config(format!(
            "cannot take {target} views from a {rendered}-view sample"
        )));
    }
    let views = (0..target)
        .map(|k| sample.views[k * rendered / target].clone())
        .collect();
    Ok(ViewSet {
        views,
        label: sample.label,
        shape_id: sample.shape_id,
    })
}

fn subsample_split(data: &[ViewSet], target: usize) -> Result<Vec<ViewSet>> {
    data.iter().map(|s| subsample_views(s, target)).collect()
}

fn read_existing_rows(path: &Path) -> Result<Vec<SweepCell>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SWEEP_HEADER => {}
        other => {
            return Err(TrainError::Format(format!(
                "sweep.csv has unexpected header {other:?}"
            )))
        }
    }
    lines.map(SweepCell::parse_csv_row).collect()
}

/// Run (or resume) a sweep. Completed (cell, seed) rows found in
/// `out_dir/sweep.csv` are kept byte-for-byte and not retrained; missing
/// rows are trained in deterministic order and appended. Returns every
/// row plus per-cell aggregates, which are also rewritten to
/// `out_dir/summary.csv`.
pub fn run_sweep<T: Element>(
    spec: &SweepSpec,
    train_data: &[ViewSet],
    val_data: &[ViewSet],
    out_dir: &Path,
    timing: TimingMode,
) -> Result<(Vec<SweepCell>, Vec<SweepResult>)> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| TrainError::io(out_dir, e))?;
    let plans = plan_cells(spec);

    if spec.axis == SweepAxis::BlockSplit {
        let counts: Vec<usize> = plans.iter().map(|p| p.config.param_count()).collect();
        if counts.windows(2).any(|w| w[0] != w[1]) {
            return Err(TrainError::Config(format!(
                "block-split cells must share one parameter count, got {counts:?}"
            )));
        }
    }

    let csv_path = out_dir.join("sweep.csv");
    let existing = read_existing_rows(&csv_path)?;
    let planned = |cell_id: &str, seed: u64| {
        plans.iter().any(|p| p.cell_id == cell_id) && spec.seeds.contains(&seed)
    };
    if let Some(row) = existing
        .iter()
        .find(|r| r.axis != spec.axis || !planned(&r.cell_id, r.seed))
    {
        return Err(TrainError::Format(format!(
            "sweep.csv row ({}, seed {}) does not belong to this sweep",
            row.cell_id, row.seed
        )));
    }

    let mut csv = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&csv_path)
        .map_err(|e| TrainError::io(&csv_path, e))?;
    if existing.is_empty() {
        writeln!(csv, "{SWEEP_HEADER}").map_err(|e| TrainError::io(&csv_path, e))?;
    }

    let mut rows = Vec::with_capacity(plans.len() * spec.seeds.len());
    for plan in &plans {
        let (cell_train, cell_val) = match plan.take_views {
            Some(l) => (
                subsample_split(train_data, l)?,
                subsample_split(val_data, l)?,
            ),
            None => (train_data.to_vec(), val_data.to_vec()),
        };
        let flops_fwd = attention_flops(&plan.config).total;
        let params = plan.config.param_count();
        for &seed in &spec.seeds {
            if let Some(done) = existing
                .iter()
                .find(|r| r.cell_id == plan.cell_id && r.seed == seed)
            {
                rows.push(done.clone());
                continue;
            }
            let cell_dir = out_dir
                .join("cells")
                .join(format!("{}-s{seed}", plan.cell_id));
            let tc = TrainConfig {
                seed,
                ..spec.train.clone()
            };
            let outcome =
                train_typed::<T>(&plan.config, &tc, &cell_train, &cell_val, &cell_dir, timing)?;
            let row = SweepCell {
                axis: spec.axis,
                cell_id: plan.cell_id.clone(),
                seed,
                s: plan.config.local_blocks,
                t: plan.config.global_blocks,
                l: plan.config.views,
                pooling: plan.config.pooling,
                val_acc: outcome.best_val_acc,
                train_seconds: outcome.history.iter().map(|m| m.seconds).sum(),
                flops_fwd,
                params,
            };
            writeln!(csv, "{}", row.csv_row()).map_err(|e| TrainError::io(&csv_path, e))?;
            csv.flush().map_err(|e| TrainError::io(&csv_path, e))?;
            rows.push(row);
        }
    }

    let results = aggregate(spec, &plans, &rows)?;
    let summary_path = out_dir.join("summary.csv");
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for r in &results {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:.3},{},{},{}\n",
            spec.axis.name(),
            r.cell_id,
            r.s,
            r.t,
            r.l,
            r.pooling.name(),
            r.mean_val_acc,
            r.min_val_acc,
            r.max_val_acc,
            r.mean_train_seconds,
            r.flops_fwd,
            r.params,
            if r.is_best { 1 } else { 0 }
        ));
    }
    std::fs::write(&summary_path, text).map_err(|e| TrainError::io(&summary_path, e))?;
    Ok((rows, results))
}

fn aggregate(
    spec: &SweepSpec,
    plans: &[CellPlan],
    rows: &[SweepCell],
) -> Result<Vec<SweepResult>> {
    let mut results = Vec::with_capacity(plans.len());
    for plan in plans {
        let cell_rows: Vec<&SweepCell> =
            rows.iter().filter(|r| r.cell_id == plan.cell_id).collect();
        if cell_rows.len() != spec.seeds.len() {
            return Err(TrainError::Format(format!(
                "cell {} has {} rows, expected {}",
                plan.cell_id,
                cell_rows.len(),
                spec.seeds.len()
            )));
        }
        let accs: Vec<f64> = cell_rows.iter().map(|r| r.val_acc).collect();
        results.push(SweepResult {
            cell_id: plan.cell_id.clone(),
            s: plan.config.local_blocks,
            t: plan.config.global_blocks,
            l: plan.config.views,
            pooling: plan.config.pooling,
            mean_val_acc: accs.iter().sum::<f64>() / accs.len() as f64,
            min_val_acc: accs.iter().cloned().fold(f64::INFINITY, f64::min),
            max_val_acc: accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mean_train_seconds: cell_rows.iter().map(|r| r.train_seconds).sum::<f64>()
                / cell_rows.len() as f64,
            flops_fwd: cell_rows[0].flops_fwd,
            params: cell_rows[0].params,
            is_best: false,
        });
    }
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.mean_val_acc > results[best].mean_val_acc {
            best = i;
        }
    }
    results[best].is_best = true;
    Ok(results)
}

/// Efficiency snapshot of one config: analytic FLOPs, parameter count,
/// measured forward and train-step wall time on synthetic views, and
/// the tape's peak live-byte estimate for the step.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub flops: FlopCounts,
    pub params: usize,
    pub samples: usize,
    pub forward_seconds: f64,
    pub step_seconds: f64,
    pub peak_tape_bytes: usize,
}

/// Time `samples` forwards and one batched training-style step (forward,
/// loss, backward) on deterministic synthetic data.
pub fn bench<T: Element>(config: &MVTConfig, samples: usize, seed: u64) -> Result<BenchReport> {
    config.validate()?;
    if samples == 0 {
        return Err(TrainError::Config("bench needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = config.img_h * config.img_w * config.channels;
    let data: Vec<ViewSet> = (0..samples)
        .map(|i| ViewSet {
            views: (0..config.views)
                .map(|_| (0..pixels).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect(),
            label: i % config.classes,
            shape_id: i as u64,
        })
        .collect();
    let params = init_params::<T>(config, seed)?;

    let t0 = Instant::now();
    let mut tape: Tape<T> = Tape::new();
    let model = load_model(&mut tape, &params, config)?;
    for sample in &data {
        let views = crate::trainer::views_to_tensors::<T>(sample, config)?;
        forward_loaded(&mut tape, &model, config, &views)?;
    }
    let forward_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let mut tape: Tape<T> = Tape::new();
    let model = load_model(&mut tape, &params, config)?;
    let mut logit_nodes = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for sample in &data {
        let views = crate::trainer::views_to_tensors::<T>(sample, config)?;
        logit_nodes.push(forward_loaded(&mut tape, &model, config, &views)?);
        labels.push(sample.label);
    }
    let logits = tape.concat_rows(&logit_nodes)?;
    let loss = tape.cross_entropy_mean(logits, &labels)?;
    tape.backward(loss)?;
    let step_seconds = t1.elapsed().as_secs_f64();

    Ok(BenchReport {
        flops: attention_flops(config),
        params: config.param_count(),
        samples,
        forward_seconds,
        step_seconds,
        peak_tape_bytes: tape.peak_bytes(),
    })
}
