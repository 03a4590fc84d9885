//! AdamW: bias-corrected Adam moments with decoupled weight decay.

use crate::error::{Result, TrainError};
use mvt_core::{Element, ParamStore};

/// Optimization schedule and budget for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Adam denominator epsilon.
    pub eps: f64,
    pub epochs: usize,
    /// Samples per optimizer step; one sample is one object's L views.
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs between validation passes; rows in between repeat the last
    /// measured value.
    pub eval_every: usize,
    /// Stop as soon as a validation pass reaches this accuracy.
    pub target_val_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            weight_decay: 0.05,
            eps: 1e-8,
            epochs: 60,
            batch_size: 10,
            seed: 0,
            eval_every: 1,
            target_val_acc: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(TrainError::Config(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.lr
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(TrainError::Config(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(TrainError::Config(format!(
                "weight decay must be finite and nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.eps <= 0.0 {
            return Err(TrainError::Config(format!(
                "epsilon must be positive, got {}",
                self.eps
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(TrainError::Config(format!(
                "epochs, batch size, and eval cadence must be positive: \
                 epochs={} batch_size={} eval_every={}",
                self.epochs, self.batch_size, self.eval_every
            )));
        }
        if let Some(t) = self.target_val_acc {
            if !(0.0..=1.0).contains(&t) {
                return Err(TrainError::Config(format!(
                    "target accuracy must lie in [0, 1], got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Whether weight decay applies to a parameter. Only matrix weights
/// decay; LayerNorm gains/shifts, biases, the class token, and position
/// embeddings are excluded. The naming scheme makes this a suffix test:
/// weight matrices are the parameters whose last path segment starts
/// with `w` (w0, wq, wk, wv, wo, w1, w2, head.w).
pub fn decay_applies(name: &str) -> bool {
    name.rsplit('.').next().is_some_and(|leaf| leaf.starts_with('w'))
}

/// Optimizer state: first/second moment estimates mirroring the
/// parameter shapes, plus the step counter for bias correction.
#[derive(Debug, Clone)]
pub struct AdamW<T: Element> {
    m: ParamStore<T>,
    v: ParamStore<T>,
    step: u64,
}

impl<T: Element> AdamW<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        AdamW {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Decay is decoupled: the shrink is applied to the
    /// parameter directly, not mixed into the gradient. Non-finite
    /// gradients abort before anything mutates.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &ParamStore<T>,
        config: &TrainConfig,
    ) -> Result<()> {
        if !grads.all_finite() {
            return Err(TrainError::Numeric(
                "non-finite gradient; step aborted".into(),
            ));
        }
        self.step += 1;
        let bc1 = 1.0 - config.beta1.powi(self.step as i32);
        let bc2 = 1.0 - config.beta2.powi(self.step as i32);
        for (name, theta) in params.iter_mut() {
            let g = grads.get(name)?;
            let decay = if decay_applies(name) {
                1.0 - config.lr * config.weight_decay
            } else {
                1.0
            };
            let m = self.m.get_mut(name)?;
            let v = self.v.get_mut(name)?;
            let (td, md, vd, gd) = (
                theta.data_mut(),
                m.data_mut(),
                v.data_mut(),
                g.data(),
            );
            for i in 0..td.len() {
                let gi = gd[i].as_f64();
                let mi = config.beta1 * md[i].as_f64() + (1.0 - config.beta1) * gi;
                let vi = config.beta2 * vd[i].as_f64() + (1.0 - config.beta2) * gi * gi;
                md[i] = T::from_f64(mi);
                vd[i] = T::from_f64(vi);
                let update = config.lr * (mi / bc1) / ((vi / bc2).sqrt() + config.eps);
                td[i] = T::from_f64(td[i].as_f64() * decay - update);
            }
        }
        Ok(())
    }
}
