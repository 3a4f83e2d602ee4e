use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{argmax, cross_entropy, Model, PreparedSample};
use super::optim::{AdamW, CosineSchedule};
use crate::error::{Error, Result};
use crate::perturb::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    /// Floor of the cosine schedule as a fraction of `lr`.
    pub min_lr_ratio: f64,
    pub seed: u64,
    /// Skip test-set evaluation on all but the last epoch.
    pub eval_last_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            lr: 2e-3,
            weight_decay: 5e-2,
            warmup_epochs: 3,
            min_lr_ratio: 0.01,
            seed: 0,
            eval_last_only: false,
        }
    }

    /// Long-schedule settings: AdamW, cosine, 10 warmup epochs, 300 epochs.
    pub fn full_scale(lr: f64) -> Self {
        TrainConfig { epochs: 300, batch_size: 32, lr, warmup_epochs: 10, ..TrainConfig::desk() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "modelnet40" => Ok(Self::full_scale(5e-4)),
            "scanobjectnn" => Ok(Self::full_scale(1e-4)),
            other => Err(Error::invalid(format!("unknown training preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning rate and weight decay must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test: Option<Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub initial_test: Option<Evaluation>,
    pub final_test: Option<Evaluation>,
}

/// Loss and accuracy over `samples`, evaluated in chunks of `batch`.
pub fn evaluate(model: &Model, samples: &[PreparedSample], batch: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&PreparedSample> = chunk.iter().collect();
        let logits = model.logits(&refs)?;
        let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
        loss += cross_entropy(&logits, &labels).0 * chunk.len() as f64;
        for (row, &y) in logits.rows().into_iter().zip(&labels) {
            correct += usize::from(argmax(row.as_slice().expect("row")) == y);
        }
    }
    let n = samples.len() as f64;
    Ok(Evaluation { loss: loss / n, accuracy: correct as f64 / n })
}

/// Minibatch AdamW training. `on_epoch` sees every record as it is produced,
/// so partial progress survives a divergence error.
pub fn train(
    model: &mut Model,
    train_set: &[PreparedSample],
    test_set: &[PreparedSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput);
    }
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let schedule = CosineSchedule {
        base_lr: cfg.lr,
        min_lr: cfg.lr * cfg.min_lr_ratio,
        warmup_steps: cfg.warmup_epochs * steps_per_epoch,
        total_steps: cfg.epochs * steps_per_epoch,
    };
    let mut opt = AdamW::new(model, cfg.weight_decay);
    let eval_test = |m: &Model| -> Result<Option<Evaluation>> {
        if test_set.is_empty() {
            Ok(None)
        } else {
            evaluate(m, test_set, cfg.batch_size.max(32)).map(Some)
        }
    };
    let initial_test = eval_test(model)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut lr = schedule.lr(step);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let (logits, cache) = model.forward(&batch).map_err(|e| diverged(e, epoch))?;
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let (loss, dlogits) = cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            for (row, &y) in logits.rows().into_iter().zip(&labels) {
                correct += usize::from(argmax(row.as_slice().expect("row")) == y);
            }
            loss_sum += loss * batch.len() as f64;
            let mut grad = model.zeros_like();
            model.backward(&cache, dlogits.view(), &mut grad);
            lr = schedule.lr(step);
            opt.step(model, &grad, lr);
            step += 1;
        }
        let last = epoch + 1 == cfg.epochs;
        let test = if cfg.eval_last_only && !last { None } else { eval_test(model).map_err(|e| diverged(e, epoch))? };
        let n = train_set.len() as f64;
        let rec = EpochRecord { epoch, lr, train_loss: loss_sum / n, train_acc: correct as f64 / n, test };
        on_epoch(&rec)?;
        epochs.push(rec);
    }
    let final_test = epochs.last().and_then(|e| e.test).or(initial_test);
    Ok(TrainReport { epochs, initial_test, final_test })
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NumericalOverflow { .. } => Error::Diverged { epoch, loss: f64::NAN },
        other => other,
    }
}
