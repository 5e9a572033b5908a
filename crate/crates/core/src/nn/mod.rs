//! A from-scratch LSTM sequence classifier with backpropagation through time,
//! Adam, a multi-step learning-rate schedule and cross-entropy loss.
//!
//! Everything is computed in `f64`. Training is bit-deterministic for a given
//! seed: all randomness (initialization, shuffling, dropout) comes from one
//! ChaCha stream and no reduction is split across threads.

mod adam;
mod checkpoint;
mod model;
mod windows;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{argmax, dropout_mask, log_softmax, pack_time_major, softmax, LayerParams, LstmClassifier, ModelDims, Params};
pub use windows::{window_segments, window_starts, WindowRef, WindowSet};

use crate::datamodel::N_CLASSES;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub seed: u64,
    pub window_len: usize,
    pub window_stride: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub dropout_after_last: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            batch_size: 256,
            lr0: 2e-4,
            milestones: vec![200],
            decay: 0.05,
            seed: 0,
            window_len: 120,
            window_stride: 60,
            hidden: 512,
            layers: 4,
            dropout: 0.5,
            dropout_after_last: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("window_len", self.window_len),
            ("window_stride", self.window_stride),
            ("hidden", self.hidden),
            ("layers", self.layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Parameter(format!("{name} must be positive")));
        }
        if !(self.lr0 > 0.0 && self.decay > 0.0) {
            return Err(Error::Parameter("lr0 and decay must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        if let Some(m) = self.milestones.iter().find(|&&m| m >= self.epochs) {
            return Err(Error::Parameter(format!("milestone {m} is not below {} epochs", self.epochs)));
        }
        Ok(())
    }

    pub fn dims(&self, n_features: usize) -> ModelDims {
        ModelDims {
            n_features,
            hidden: self.hidden,
            layers: self.layers,
            n_classes: N_CLASSES,
        }
    }
}

/// `lr0 · decay^(number of milestones ≤ epoch)`
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.milestones.iter().filter(|&&m| m <= epoch).count();
    cfg.lr0 * cfg.decay.powi(passed as i32)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    /// Fraction in [0, 1]; NaN when there is no validation set.
    pub val_accuracy: Vec<f64>,
    pub lr: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_model: LstmClassifier,
    pub best_model: LstmClassifier,
    pub best_epoch: usize,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

const PREDICT_CHUNK: usize = 256;

/// Class and probability vector for every window.
pub fn predict(model: &LstmClassifier, windows: &WindowSet) -> Result<Vec<Prediction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx: Vec<usize> = (0..windows.len()).collect();
    let mut out = Vec::with_capacity(windows.len());
    for chunk in idx.chunks(PREDICT_CHUNK) {
        let (x, _) = windows.pack(chunk);
        let logits = model.forward_packed(&x, chunk.len(), false, &mut rng)?;
        for row in softmax(&logits.view()).rows() {
            let p = row.to_vec();
            out.push(Prediction { class: argmax(&p), probabilities: p });
        }
    }
    Ok(out)
}

pub fn accuracy(preds: &[Prediction], labels: &[usize]) -> f64 {
    if preds.is_empty() {
        return f64::NAN;
    }
    preds.iter().zip(labels).filter(|(p, &l)| p.class == l).count() as f64 / preds.len() as f64
}

/// Mini-batch training. Returns the final-epoch model and the model with the
/// best validation accuracy (earliest epoch on ties).
pub fn train(train_set: &WindowSet, val_set: &WindowSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if train_set.window_len() != cfg.window_len {
        return Err(Error::Parameter(format!(
            "windows have {} samples, config says {}",
            train_set.window_len(),
            cfg.window_len
        )));
    }
    if !val_set.is_empty() && (val_set.n_features() != train_set.n_features() || val_set.window_len() != train_set.window_len()) {
        return Err(Error::Shape("validation windows differ in shape from training windows".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = LstmClassifier::new(cfg.dims(train_set.n_features()), cfg.dropout, cfg.dropout_after_last, &mut rng);
    let mut adam = AdamState::new(&model.params);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, LstmClassifier)> = None;
    let val_labels = val_set.labels();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = train_set.pack(chunk);
            let (loss, grads) = match model.loss_and_grad_packed(&x, &labels, &mut rng) {
                Ok(v) => v,
                Err(Error::NonFiniteLoss { .. }) => {
                    return Err(Error::Diverged {
                        history: Box::new(history),
                        source: Box::new(Error::NonFiniteLoss { epoch, batch: bi }),
                    })
                }
                Err(e) => return Err(e),
            };
            loss_sum += loss * chunk.len() as f64;
            adam_step(&mut model.params, &grads, &mut adam, lr);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_acc = if val_set.is_empty() {
            f64::NAN
        } else {
            accuracy(&predict(&model, val_set)?, &val_labels)
        };
        log::debug!("epoch {epoch}: lr {lr:.3e} train loss {train_loss:.4} val acc {val_acc:.4}");
        history.train_loss.push(train_loss);
        history.val_accuracy.push(val_acc);
        history.lr.push(lr);
        if !val_acc.is_nan() && best.as_ref().is_none_or(|(a, _, _)| val_acc > *a) {
            best = Some((val_acc, epoch, model.clone()));
        }
    }

    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (cfg.epochs - 1, model.clone()),
    };
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests;
