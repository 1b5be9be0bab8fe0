//! Adapter fine-tuning: AdamW with a warm-up cosine schedule over an
//! ordered training stream.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::toy::{Example, MediaCache, ToyModel};
use super::ModelError;
use crate::labels::TaskKind;
use crate::scheduler::TrainingItem;

const TRACE_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_ratio: f64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 2,
            batch_size: 1,
            warmup_ratio: 0.03,
            min_lr: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            max_grad_norm: Some(1.0),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!(
                "warmup_ratio must be in [0, 1), got {}",
                self.warmup_ratio
            ));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.learning_rate) {
            return bad("min_lr must be in [0, learning_rate]".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("betas must be in [0, 1)".into());
        }
        if !(self.eps > 0.0 && self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative".into());
        }
        if let Some(c) = self.max_grad_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("max_grad_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Learning rate at 0-based `step` of `total`: linear warm-up, then cosine
/// decay to `min_lr`.
pub fn lr_at(step: usize, total: usize, cfg: &OptimConfig) -> f64 {
    let warmup = (cfg.warmup_ratio * total as f64).ceil() as usize;
    if step < warmup {
        return cfg.learning_rate * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    cfg.min_lr + (cfg.learning_rate - cfg.min_lr) * 0.5 * (1.0 + (PI * progress).cos())
}

#[derive(Debug, Clone, Default)]
pub struct AdamW {
    step: u64,
    moments: BTreeMap<String, (Array2<f64>, Array2<f64>)>,
}

impl AdamW {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one update to every trainable parameter that has a gradient.
    pub fn update(
        &mut self,
        model: &mut ToyModel,
        grads: &BTreeMap<String, Array2<f64>>,
        lr: f64,
        cfg: &OptimConfig,
    ) -> Result<(), ModelError> {
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
        let mut seen = 0;
        for (name, param, trainable) in model.params_mut() {
            let Some(g) = grads.get(&name) else { continue };
            if !trainable {
                return Err(ModelError::FrozenViolation(format!(
                    "gradient produced for frozen `{name}`"
                )));
            }
            seen += 1;
            let (m, v) = self.moments.entry(name).or_insert_with(|| {
                (
                    Array2::zeros(param.raw_dim()),
                    Array2::zeros(param.raw_dim()),
                )
            });
            ndarray::Zip::from(&mut *param)
                .and(&mut *m)
                .and(&mut *v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let step = (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
                    *p -= lr * (step + cfg.weight_decay * *p);
                });
        }
        if seen != grads.len() {
            return Err(ModelError::Shape(
                "gradient names do not match model parameters".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub stage_id: u8,
    pub loss: f64,
    pub lr: f64,
    pub tasks: Vec<TaskKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    /// Training items seen per task, over all epochs.
    pub task_counts: BTreeMap<TaskKind, usize>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

fn clip(grads: &mut BTreeMap<String, Array2<f64>>, max_norm: f64) {
    let norm = grads
        .values()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.values_mut().for_each(|g| g.mapv_inplace(|v| v * k));
    }
}

/// Trains `model`'s adapters and projector on `stream` in order. Frozen
/// parameters are compared bit for bit before and after; any change fails
/// the stage.
pub fn train_stage(
    stream: &[TrainingItem],
    model: &mut ToyModel,
    optim: &OptimConfig,
    cache: &mut MediaCache,
) -> Result<TrainReport, ModelError> {
    optim.validate()?;
    if stream.is_empty() {
        return Err(ModelError::EmptyStream);
    }
    if !model.has_adapters() {
        return Err(ModelError::NoAdapters);
    }
    let examples: Vec<(Example, TaskKind, u8)> = stream
        .iter()
        .map(|item| {
            Ok((
                model.example(&item.record, cache)?,
                item.record.task,
                item.stage_id,
            ))
        })
        .collect::<Result<_, ModelError>>()?;
    let frozen_before: Vec<(String, Array2<f64>)> = model
        .params()
        .into_iter()
        .filter(|p| !p.2)
        .map(|(n, p, _)| (n, p.clone()))
        .collect();

    let batches: Vec<&[(Example, TaskKind, u8)]> = examples.chunks(optim.batch_size).collect();
    let total = batches.len() * optim.epochs;
    let mut adam = AdamW::new();
    let mut report = TrainReport::default();
    let mut trace: Vec<f64> = Vec::new();

    for step in 0..total {
        let batch = batches[step % batches.len()];
        let results: Vec<Result<_, ModelError>> = batch
            .par_iter()
            .map(|(ex, _, _)| model.loss_and_grads(ex))
            .collect();
        let mut loss = 0.0;
        let mut grads: BTreeMap<String, Array2<f64>> = BTreeMap::new();
        for r in results {
            let (l, g) = match r {
                Ok(v) => v,
                Err(ModelError::NonFinite(_)) => (f64::NAN, BTreeMap::new()),
                Err(e) => return Err(e),
            };
            loss += l;
            for (name, g) in g {
                match grads.get_mut(&name) {
                    Some(acc) => *acc += &g,
                    None => {
                        grads.insert(name, g);
                    }
                }
            }
        }
        let n = batch.len() as f64;
        loss /= n;
        trace.push(loss);
        if trace.len() > TRACE_LEN {
            trace.remove(0);
        }
        let grads_finite = grads.values().all(|g| g.iter().all(|v| v.is_finite()));
        if !loss.is_finite() || !grads_finite {
            return Err(ModelError::Divergence { step, trace });
        }
        grads.values_mut().for_each(|g| g.mapv_inplace(|v| v / n));
        if let Some(max) = optim.max_grad_norm {
            clip(&mut grads, max);
        }
        let lr = lr_at(step, total, optim);
        adam.update(model, &grads, lr, optim)?;

        let tasks: Vec<TaskKind> = batch.iter().map(|b| b.1).collect();
        for t in &tasks {
            *report.task_counts.entry(*t).or_default() += 1;
        }
        log::debug!("step {step}/{total} loss {loss:.4} lr {lr:.2e}");
        report.steps.push(StepLog {
            step,
            stage_id: batch[0].2,
            loss,
            lr,
            tasks,
        });
    }

    let params = model.params();
    let changed: Vec<&str> = frozen_before
        .iter()
        .filter(|(name, before)| {
            params
                .iter()
                .find(|p| &p.0 == name)
                .is_none_or(|p| p.2 || !bitwise_equal(p.1, before))
        })
        .map(|(n, _)| n.as_str())
        .collect();
    if !changed.is_empty() {
        return Err(ModelError::FrozenViolation(changed.join(", ")));
    }
    Ok(report)
}

fn bitwise_equal(a: &Array2<f64>, b: &Array2<f64>) -> bool {
    a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
