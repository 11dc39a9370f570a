//! Loss, learning-rate schedule and Adam training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::GraphInput;
use super::model::{EmdModel, ForwardTape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(1/n) Σ α |λ − λ̃|`.
    #[default]
    Absolute,
    /// `(1/n) Σ α (λ − λ̃)²`.
    Squared,
}

fn check_lengths(pred: &[f64], reference: &[f64]) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} reference values",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Contract("loss over zero elements".into()));
    }
    Ok(())
}

/// Mean weighted absolute residual.
pub fn loss(pred: &[f64], reference: &[f64], alpha: f64) -> Result<f64> {
    loss_with(LossKind::Absolute, pred, reference, alpha)
}

pub fn loss_with(kind: LossKind, pred: &[f64], reference: &[f64], alpha: f64) -> Result<f64> {
    check_lengths(pred, reference)?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(reference)
        .map(|(p, r)| match kind {
            LossKind::Absolute => (p - r).abs(),
            LossKind::Squared => (p - r).powi(2),
        })
        .sum();
    Ok(alpha * sum / n)
}

/// `dL/dλ̃`; the absolute loss uses subgradient 0 at zero residual.
pub fn loss_gradient(kind: LossKind, pred: &[f64], reference: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_lengths(pred, reference)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(reference)
        .map(|(p, r)| {
            let d = p - r;
            match kind {
                LossKind::Absolute => {
                    if d > 0.0 {
                        alpha / n
                    } else if d < 0.0 {
                        -alpha / n
                    } else {
                        0.0
                    }
                }
                LossKind::Squared => 2.0 * alpha * d / n,
            }
        })
        .collect())
}

/// Loss and gradients of every weight for one graph.
pub fn backward(model: &EmdModel, input: &GraphInput, reference: &[f64], alpha: f64, kind: LossKind) -> Result<(f64, EmdModel)> {
    let mut tape = ForwardTape::default();
    let pred = model.forward_with_tape(input, &mut tape)?;
    let l = loss_with(kind, &pred, reference, alpha)?;
    let d = loss_gradient(kind, &pred, reference, alpha)?;
    Ok((l, model.backward(input, &tape, &d)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub total_steps: usize,
    pub decay_start_step: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    pub alpha: f64,
    pub loss: LossKind,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            total_steps: 50_000,
            decay_start_step: 30_000,
            lr_initial: 1e-3,
            lr_final: 1e-5,
            batch_size: 1,
            alpha: 1.0,
            loss: LossKind::Absolute,
            checkpoint_every: 5_000,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.decay_start_step >= self.total_steps {
            return Err(Error::invalid("decay_start_step", "must be below total_steps"));
        }
        if !(self.lr_final > 0.0 && self.lr_final < self.lr_initial) {
            return Err(Error::invalid("lr_final", "must be positive and below lr_initial"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid("alpha", "must be non-negative"));
        }
        Ok(())
    }

    /// Constant until `decay_start_step`, then geometric interpolation that
    /// reaches `lr_final` at `total_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step <= self.decay_start_step {
            return self.lr_initial;
        }
        let t = ((step - self.decay_start_step) as f64 / (self.total_steps - self.decay_start_step) as f64).min(1.0);
        self.lr_initial * (self.lr_final / self.lr_initial).powf(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn history_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for r in history {
        s.push_str(&format!("{},{:e},{:e}\n", r.step, r.lr, r.loss));
    }
    s
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, model: &mut EmdModel, grad: &EmdModel, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in model.params_mut().zip(grad.params()).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + Self::EPS);
        }
        model.round_to_storage();
    }
}

fn add_scaled(acc: &mut EmdModel, g: &EmdModel, s: f64) {
    for (a, b) in acc.params_mut().zip(g.params()) {
        *a += s * b;
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: EmdModel,
    pub history: Vec<LossRecord>,
}

/// Mean loss of `model` over a dataset.
pub fn dataset_loss(model: &EmdModel, data: &[(GraphInput, Vec<f64>)], alpha: f64, kind: LossKind) -> Result<f64> {
    let mut total = 0.0;
    for (g, y) in data {
        total += loss_with(kind, &model.forward(g)?, y, alpha)?;
    }
    Ok(total / data.len() as f64)
}

pub fn train(model: EmdModel, data: &[(GraphInput, Vec<f64>)], schedule: &TrainSchedule) -> Result<TrainReport> {
    train_with(model, data, schedule, |_, _| {})
}

/// Adam over `data` with graphs visited in seeded shuffled epochs.
/// `on_checkpoint(step, model)` runs every `checkpoint_every` steps. A
/// non-finite loss aborts with the last checkpoint.
pub fn train_with(
    mut model: EmdModel,
    data: &[(GraphInput, Vec<f64>)],
    schedule: &TrainSchedule,
    mut on_checkpoint: impl FnMut(usize, &EmdModel),
) -> Result<TrainReport> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training needs a non-empty dataset".into()));
    }
    for (g, y) in data {
        if g.nodes != y.len() {
            return Err(Error::Contract(format!("{} nodes but {} reference values", g.nodes, y.len())));
        }
    }
    model.validate()?;
    model.round_to_storage();
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut adam = Adam::new(model.param_count());
    let mut checkpoint = (0usize, model.clone());
    let mut history = Vec::with_capacity(schedule.total_steps);
    for step in 0..schedule.total_steps {
        let lr = schedule.lr_at(step);
        let mut grad = model.zeroed_like();
        let mut batch_loss = 0.0;
        for _ in 0..schedule.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (g, y) = &data[order[cursor]];
            cursor += 1;
            let result = backward(&model, g, y, schedule.alpha, schedule.loss);
            let (l, gr) = match result {
                Ok(v) if v.0.is_finite() => v,
                Ok(_) | Err(Error::Numeric { .. }) => {
                    return Err(Error::Diverged {
                        step,
                        checkpoint_step: checkpoint.0,
                        checkpoint: Box::new(checkpoint.1),
                    })
                }
                Err(e) => return Err(e),
            };
            batch_loss += l;
            add_scaled(&mut grad, &gr, 1.0 / schedule.batch_size as f64);
        }
        history.push(LossRecord {
            step,
            lr,
            loss: batch_loss / schedule.batch_size as f64,
        });
        adam.step(&mut model, &grad, lr);
        if !model.params().all(|p| p.is_finite()) {
            return Err(Error::Diverged {
                step,
                checkpoint_step: checkpoint.0,
                checkpoint: Box::new(checkpoint.1),
            });
        }
        if schedule.checkpoint_every > 0 && (step + 1) % schedule.checkpoint_every == 0 {
            checkpoint = (step + 1, model.clone());
            on_checkpoint(step + 1, &model);
        }
    }
    Ok(TrainReport { model, history })
}
