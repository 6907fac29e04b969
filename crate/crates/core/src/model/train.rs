use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Bound, Dataset, Model};
use crate::autodiff::{adam_step, sigmoid, AdamConfig, OptimizerState, ParamStore, Tape};
use crate::error::{GasError, Result};
use crate::eval::{roc_auc, ScoredSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Train, validation and test shares of the labeled comments.
    pub split: [f64; 3],
    pub seed: u64,
    /// Loss weight of spam comments; `None` uses negatives/positives of the
    /// training split.
    pub pos_weight: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 128,
            learning_rate: 0.005,
            split: [0.6, 0.1, 0.3],
            seed: 0,
            pos_weight: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.split.iter().any(|&s| !(s > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(GasError::Config(format!(
                "split fractions must be positive and sum to 1, got {:?}",
                self.split
            )));
        }
        if self.batch_size == 0 {
            return Err(GasError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(GasError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Edge ids of the labeled comments in each part.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded random split of the labeled edges by the given shares.
pub fn split_labeled(data: &Dataset, shares: [f64; 3], seed: u64) -> Result<Split> {
    let mut labeled: Vec<usize> = (0..data.graph.num_edges())
        .filter(|&e| data.graph.record(e).label.as_target().is_some())
        .collect();
    if labeled.is_empty() {
        return Err(GasError::Config("no labeled comments to train on".into()));
    }
    labeled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = labeled.len() as f64;
    let n_train = (n * shares[0]).round() as usize;
    let n_val = ((n * shares[1]).round() as usize).min(labeled.len() - n_train.min(labeled.len()));
    let test = labeled.split_off((n_train + n_val).min(labeled.len()));
    let validation = labeled.split_off(n_train.min(labeled.len()));
    Ok(Split {
        train: labeled,
        validation,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted loss over the epoch's training batches.
    pub train_loss: f64,
    /// AUC of the scores produced while training on each batch.
    pub train_auc: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation AUC.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub split: Split,
    pub best_epoch: Option<usize>,
    pub pos_weight: f64,
}

fn targets(data: &Dataset, edges: &[usize]) -> Vec<f64> {
    edges
        .iter()
        .map(|&e| data.graph.record(e).label.as_target().unwrap_or(0.0))
        .collect()
}

fn auc_of(scores: Vec<f64>, targets: &[f64]) -> Option<f64> {
    let s = ScoredSet::new(scores, targets.iter().map(|&t| t > 0.5).collect()).ok()?;
    roc_auc(&s).ok()
}

fn weighted_loss(logits: &[f64], targets: &[f64], pos_weight: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&z, &y) in logits.iter().zip(targets) {
        let w = if y > 0.5 { pos_weight } else { 1.0 };
        num += w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
        den += w;
    }
    num / den
}

fn batch_logits(model: &Model, bound: &Bound, edges: &[usize], batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(edges.len());
    for chunk in edges.chunks(batch_size.max(1)) {
        let mut tape = Tape::with_params(&model.store);
        let z = model.logits(&mut tape, bound, chunk)?;
        out.extend_from_slice(tape.value(z).data());
    }
    Ok(out)
}

/// Spam probabilities for `edges`, in order. The batch size affects only
/// speed.
pub fn predict_batch(model: &Model, data: &Dataset, edges: &[usize], batch_size: usize) -> Result<Vec<f64>> {
    let bound = model.bind(data)?;
    Ok(batch_logits(model, &bound, edges, batch_size)?.into_iter().map(sigmoid).collect())
}

/// Mini-batch Adam on weighted binary cross-entropy, keeping the parameters
/// of the epoch with the best validation AUC.
pub fn train(data: &Dataset, model: Model, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let split = split_labeled(data, cfg.split, cfg.seed)?;
    let mut model = model;
    let bound = model.bind(data)?;
    let train_targets = targets(data, &split.train);
    let pos = train_targets.iter().filter(|&&t| t > 0.5).count();
    let neg = train_targets.len() - pos;
    let pos_weight = match cfg.pos_weight {
        Some(w) => w,
        None if pos > 0 && neg > 0 => neg as f64 / pos as f64,
        None => 1.0,
    };
    let val_targets = targets(data, &split.validation);
    let mut opt = OptimizerState::new(
        &model.store,
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order = split.train.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut seen_scores = Vec::with_capacity(order.len());
        let mut seen_targets = Vec::with_capacity(order.len());
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let y = targets(data, chunk);
            let w: Vec<f64> = y.iter().map(|&t| if t > 0.5 { pos_weight } else { 1.0 }).collect();
            let mut tape = Tape::with_params(&model.store);
            let z = model.logits(&mut tape, &bound, chunk)?;
            let loss = tape.bce_with_logits(z, &y, &w)?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(GasError::NonFinite(format!("loss {lv} at epoch {epoch}, batch {b}")));
            }
            seen_scores.extend_from_slice(tape.value(z).data());
            seen_targets.extend_from_slice(&y);
            let grads = tape.backward(loss)?;
            let update = model.grads_for_update(&grads);
            adam_step(&mut model.store, &update, &mut opt)
                .map_err(|e| GasError::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
            model.round_to_precision();
            loss_sum += lv;
            batches += 1;
        }
        let (val_loss, val_auc) = if split.validation.is_empty() {
            (None, None)
        } else {
            let z = batch_logits(&model, &bound, &split.validation, cfg.batch_size)?;
            (Some(weighted_loss(&z, &val_targets, pos_weight)), auc_of(z, &val_targets))
        };
        let rec = EpochRecord {
            epoch,
            train_loss: if batches == 0 { 0.0 } else { loss_sum / batches as f64 },
            train_auc: auc_of(seen_scores, &seen_targets),
            val_loss,
            val_auc,
        };
        info!(
            "epoch {epoch}: train loss {:.4}, val auc {}",
            rec.train_loss,
            rec.val_auc.map_or("n/a".into(), |a| format!("{a:.4}"))
        );
        // without a defined validation AUC the latest epoch wins
        let key = rec.val_auc.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(k, _, _)| key > *k || *k == f64::NEG_INFINITY) {
            best = Some((key, epoch, model.store.clone()));
        }
        history.push(rec);
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, store)) = best {
        model.store = store;
    }
    Ok(TrainOutcome {
        model,
        history,
        split,
        best_epoch,
        pos_weight,
    })
}
