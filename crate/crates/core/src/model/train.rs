use std::io::Write;

use defog_tensor::{Adam, AdamConfig, ParamSet};

use super::net::Model;
use crate::baselines::Predictions;
use crate::config::KeyValues;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::eval::{score_huber, sweep_threshold, threshold_grid, Aggregation, Task, SWEEP_POINTS};
use crate::rng::SplitMix64;
use crate::tech::TechTree;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Optimizer steps; one sample per step.
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Validate every this many steps, and after the last one. 0 disables
    /// periodic validation.
    pub valid_every: usize,
    /// Emit a train-loss line every this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 2000, lr: AdamConfig::default().lr, seed: 0, valid_every: 500, log_every: 50 }
    }
}

impl TrainConfig {
    pub fn apply(mut self, kv: &mut KeyValues) -> Result<Self> {
        self.steps = kv.take_or("train.steps", self.steps)?;
        self.lr = kv.take_or("train.lr", self.lr)?;
        self.valid_every = kv.take_or("train.valid_every", self.valid_every)?;
        self.log_every = kv.take_or("train.log_every", self.log_every)?.max(1);
        if !(self.lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Validation {
    pub step: usize,
    pub op_u_f1: f64,
    pub op_u_threshold: f64,
    pub huber: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Total loss after each optimizer step, before its update.
    pub losses: Vec<f64>,
    pub validations: Vec<Validation>,
    /// Parameters with the best validation op_u F1, or the final ones when
    /// nothing was validated.
    pub best: ParamSet<f32>,
    pub best_validation: Option<Validation>,
}

pub fn predict_all(model: &Model<f32>, samples: &[Sample]) -> Result<Vec<Predictions>> {
    samples.iter().map(|s| model.predict(s)).collect()
}

pub fn validate(model: &Model<f32>, valid: &[Sample], tech: &TechTree, step: usize) -> Result<Validation> {
    let preds = predict_all(model, valid)?;
    let sweep = sweep_threshold(&preds, valid, Task::OpponentUnits, tech, Aggregation::Pooled, &threshold_grid(SWEEP_POINTS))?;
    let huber = score_huber(&preds, valid, model.config().huber_delta)?.huber.unwrap();
    Ok(Validation { step, op_u_f1: sweep.best_f1, op_u_threshold: sweep.best, huber })
}

/// Adam on one sample per step, visiting samples in a fresh seeded order each
/// epoch. A non-finite loss or gradient stops training with
/// [`Error::Diverged`]; the model then still holds the last finite parameters.
pub fn train(
    model: &mut Model<f32>,
    train: &[Sample],
    valid: &[Sample],
    tech: &TechTree,
    cfg: &TrainConfig,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    let mut adam = Adam::new(model.params(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut rng = SplitMix64::new(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut out = TrainOutcome {
        losses: Vec::with_capacity(cfg.steps),
        validations: Vec::new(),
        best: model.params().clone(),
        best_validation: None,
    };
    let io = |e: std::io::Error| Error::Io { path: "<train log>".into(), source: e };
    let (mut window, mut window_huber, mut window_n) = (0.0, 0.0, 0usize);
    for step in 1..=cfg.steps {
        let pos = (step - 1) % train.len();
        if pos == 0 {
            rng.shuffle(&mut order);
        }
        let epoch = (step - 1) / train.len() + 1;
        let (loss, grads) = model.loss_and_grad(&train[order[pos]])?;
        let finite = loss.total.is_finite() && grads.iter().all(|g| g.iter().all(|v| v.is_finite()));
        if !finite {
            writeln!(log, "diverged step={step} loss={:e}", loss.total).map_err(io)?;
            return Err(Error::Diverged { step, loss: loss.total });
        }
        adam.step(model.params_mut(), &grads)?;
        out.losses.push(loss.total);
        window += loss.total;
        window_huber += loss.huber;
        window_n += 1;
        if step % cfg.log_every == 0 || step == cfg.steps {
            writeln!(
                log,
                "step={step} epoch={epoch} train_loss={:.9e} train_huber={:.9e}",
                window / window_n as f64,
                window_huber / window_n as f64
            )
            .map_err(io)?;
            (window, window_huber, window_n) = (0.0, 0.0, 0);
        }
        let due = cfg.valid_every > 0 && step % cfg.valid_every == 0;
        if !valid.is_empty() && (due || step == cfg.steps) {
            let v = validate(model, valid, tech, step)?;
            writeln!(
                log,
                "step={step} epoch={epoch} valid_op_u_f1={:.6} valid_op_u_threshold={:.6} valid_huber={:.9e}",
                v.op_u_f1, v.op_u_threshold, v.huber
            )
            .map_err(io)?;
            if out.best_validation.is_none_or(|b| v.op_u_f1 > b.op_u_f1) {
                out.best = model.params().clone();
                out.best_validation = Some(v);
            }
            out.validations.push(v);
        }
    }
    if valid.is_empty() {
        out.best = model.params().clone();
    }
    Ok(out)
}
