//! Cross-entropy training loop, evaluation, and the metrics CSV.

use crate::error::{Result, TrainError};
use crate::optim::{AdamW, TrainConfig};
use mvt_core::checkpoint::{load_checkpoint, save_checkpoint};
use mvt_core::flops::attention_flops;
use mvt_core::model::{forward_loaded, init_params, load_model, MVTConfig};
use mvt_core::{Element, ParamStore, Tape, Tensor};
use mvt_data::ViewSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Whether metrics rows carry wall-clock timings. `Off` writes zeros so
/// two identical runs produce byte-identical CSVs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingMode {
    Wall,
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub seconds: f64,
    pub flops_fwd: u64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_acc,seconds,flops_fwd";

impl Metrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{}",
            self.epoch, self.train_loss, self.train_acc, self.val_acc, self.seconds, self.flops_fwd
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub history: Vec<Metrics>,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Best-validation checkpoint; reload it for the trained weights.
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
}

/// Evaluation result: argmax accuracy plus the confusion matrix indexed
/// `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub correct: usize,
    pub total: usize,
}

/// Convert one sample's raster views into the `[H, W, 1]` tensors the
/// model consumes.
pub fn views_to_tensors<T: Element>(
    sample: &ViewSet,
    config: &MVTConfig,
) -> Result<Vec<Tensor<T>>> {
    if sample.views.len() != config.views {
        return Err(TrainError::Config(format!(
            "sample has {} views but the model expects {}",
            sample.views.len(),
            config.views
        )));
    }
    let pixels = config.img_h * config.img_w * config.channels;
    let mut out = Vec::with_capacity(sample.views.len());
    for view in &sample.views {
        if view.len() != pixels {
            return Err(TrainError::Config(format!(
                "view has {} pixels but the model expects {}x{}x{}",
                view.len(),
                config.img_h,
                config.img_w,
                config.channels
            )));
        }
        let data: Vec<T> = view.iter().map(|&p| T::from_f64(p as f64)).collect();
        out.push(Tensor::new(
            vec![config.img_h, config.img_w, config.channels],
            data,
        )?);
    }
    Ok(out)
}

/// Argmax with ties resolved to the lowest class index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn check_dataset(config: &MVTConfig, data: &[ViewSet], split: &str) -> Result<()> {
    if data.is_empty() {
        return Err(TrainError::Config(format!("{split} split is empty")));
    }
    let pixels = config.img_h * config.img_w * config.channels;
    for s in data {
        if s.views.len() != config.views || s.views.iter().any(|v| v.len() != pixels) {
            return Err(TrainError::Config(format!(
                "{split} split geometry ({} views of {} pixels) does not match \
                 the model ({} views of {} pixels)",
                s.views.len(),
                s.views.first().map_or(0, |v| v.len()),
                config.views,
                pixels
            )));
        }
        if s.label >= config.classes {
            return Err(TrainError::Config(format!(
                "{split} split label {} out of range for {} classes",
                s.label, config.classes
            )));
        }
    }
    Ok(())
}

/// Run every sample through the model and score argmax predictions.
/// Samples are batched onto shared tapes so weights load once per batch.
pub fn evaluate<T: Element>(
    params: &ParamStore<T>,
    config: &MVTConfig,
    data: &[ViewSet],
) -> Result<EvalReport> {
    check_dataset(config, data, "eval")?;
    let mut confusion = vec![vec![0usize; config.classes]; config.classes];
    let mut correct = 0;
    for batch in data.chunks(32) {
        let mut tape: Tape<T> = Tape::new();
        let model = load_model(&mut tape, params, config)?;
        for sample in batch {
            let views = views_to_tensors::<T>(sample, config)?;
            let logits = forward_loaded(&mut tape, &model, config, &views)?;
            let row = tape.value(logits).to_f64_vec();
            let pred = argmax_lowest(&row);
            confusion[sample.label][pred] += 1;
            if pred == sample.label {
                correct += 1;
            }
        }
    }
    Ok(EvalReport {
        accuracy: correct as f64 / data.len() as f64,
        confusion,
        correct,
        total: data.len(),
    })
}

/// Deterministic per-epoch shuffle stream: independent of how much
/// randomness earlier epochs consumed, so resumed and fresh runs agree.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct EpochStats {
    loss: f64,
    acc: f64,
}

fn run_epoch<T: Element>(
    params: &mut ParamStore<T>,
    opt: &mut AdamW<T>,
    config: &MVTConfig,
    tc: &TrainConfig,
    data: &[ViewSet],
    epoch: usize,
) -> Result<EpochStats> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut epoch_rng(tc.seed, epoch));
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for batch in order.chunks(tc.batch_size) {
        let mut tape: Tape<T> = Tape::new();
        let model = load_model(&mut tape, params, config)?;
        let mut logit_nodes = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for &idx in batch {
            let views = views_to_tensors::<T>(&data[idx], config)?;
            logit_nodes.push(forward_loaded(&mut tape, &model, config, &views)?);
            labels.push(data[idx].label);
        }
        let logits = tape.concat_rows(&logit_nodes)?;
        let loss = tape.cross_entropy_mean(logits, &labels)?;
        let loss_value = tape.value(loss).to_f64_vec()[0];
        if !loss_value.is_finite() {
            return Err(TrainError::Numeric(format!(
                "loss {loss_value} at epoch {epoch}"
            )));
        }
        tape.backward(loss)?;
        let grads = tape.param_grads();
        // Accuracy is scored on the pre-step forward already computed.
        let rows = tape.value(logits).to_f64_vec();
        for (i, &label) in labels.iter().enumerate() {
            let row = &rows[i * config.classes..(i + 1) * config.classes];
            if argmax_lowest(row) == label {
                correct += 1;
            }
        }
        loss_sum += loss_value * batch.len() as f64;
        opt.step(params, &grads, tc)?;
    }
    Ok(EpochStats {
        loss: loss_sum / data.len() as f64,
        acc: correct as f64 / data.len() as f64,
    })
}

/// Train from a fresh seeded initialization, logging one metrics row per
/// epoch and keeping the best-validation checkpoint. The checkpoint is
/// re-loaded and re-evaluated before returning; a mismatch with the
/// recorded accuracy is an error.
pub fn train(
    config: &MVTConfig,
    tc: &TrainConfig,
    train_data: &[ViewSet],
    val_data: &[ViewSet],
    out_dir: &Path,
    timing: TimingMode,
) -> Result<TrainOutcome> {
    train_typed::<f64>(config, tc, train_data, val_data, out_dir, timing)
}

/// Generic-precision variant of [`train`]; `f32` roughly halves step
/// cost, `f64` is the bit-reproducibility mode the determinism contract
/// is stated for.
pub fn train_typed<T: Element>(
    config: &MVTConfig,
    tc: &TrainConfig,
    train_data: &[ViewSet],
    val_data: &[ViewSet],
    out_dir: &Path,
    timing: TimingMode,
) -> Result<TrainOutcome> {
    config.validate()?;
    tc.validate()?;
    check_dataset(config, train_data, "train")?;
    check_dataset(config, val_data, "val")?;
    std::fs::create_dir_all(out_dir).map_err(|e| TrainError::io(out_dir, e))?;

    let mut params = init_params::<T>(config, tc.seed)?;
    let mut opt = AdamW::new(&params);
    let flops_fwd = attention_flops(config).total;
    let ckpt_path = out_dir.join("best.ckpt");
    let csv_path = out_dir.join("metrics.csv");
    let mut csv = std::fs::File::create(&csv_path).map_err(|e| TrainError::io(&csv_path, e))?;
    writeln!(csv, "{METRICS_HEADER}").map_err(|e| TrainError::io(&csv_path, e))?;

    let mut history = Vec::with_capacity(tc.epochs);
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    // Rows between cadenced evals repeat the latest measurement; seed it
    // with the untrained model so early rows are real accuracies too.
    let mut last_val_acc = if tc.eval_every > 1 {
        evaluate(&params, config, val_data)?.accuracy
    } else {
        0.0
    };
    let mut stopped_early = false;
    for epoch in 1..=tc.epochs {
        let t0 = Instant::now();
        let stats = run_epoch(&mut params, &mut opt, config, tc, train_data, epoch)?;
        if epoch % tc.eval_every == 0 || epoch == tc.epochs {
            last_val_acc = evaluate(&params, config, val_data)?.accuracy;
            if last_val_acc > best_val_acc {
                best_val_acc = last_val_acc;
                best_epoch = epoch;
                save_checkpoint(&ckpt_path, config, &params)?;
            }
        }
        let seconds = match timing {
            TimingMode::Wall => t0.elapsed().as_secs_f64(),
            TimingMode::Off => 0.0,
        };
        let row = Metrics {
            epoch,
            train_loss: stats.loss,
            train_acc: stats.acc,
            val_acc: last_val_acc,
            seconds,
            flops_fwd,
        };
        writeln!(csv, "{}", row.csv_row()).map_err(|e| TrainError::io(&csv_path, e))?;
        csv.flush().map_err(|e| TrainError::io(&csv_path, e))?;
        history.push(row);
        if tc.target_val_acc.is_some_and(|t| last_val_acc >= t) {
            stopped_early = true;
            break;
        }
    }

    // The checkpoint must reproduce the accuracy recorded for it.
    let (ckpt_config, ckpt_params) = load_checkpoint::<T>(&ckpt_path)?;
    if ckpt_config != *config {
        return Err(TrainError::Config(
            "checkpoint config does not round-trip".into(),
        ));
    }
    let reload_acc = evaluate(&ckpt_params, config, val_data)?.accuracy;
    if reload_acc != best_val_acc {
        return Err(TrainError::Numeric(format!(
            "checkpoint re-evaluation gives {reload_acc}, recorded {best_val_acc}"
        )));
    }

    Ok(TrainOutcome {
        history,
        best_val_acc,
        best_epoch,
        stopped_early,
        checkpoint: ckpt_path,
        metrics_csv: csv_path,
    })
}
