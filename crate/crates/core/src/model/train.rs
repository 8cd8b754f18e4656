//! Mini-batch SGD on mean cross-entropy with validation-based early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::class::Class;
use crate::error::{Error, Result};
use crate::features::{FeatureProfile, LayeredEmbedding};
use crate::rng;

use super::{apply_gradients, gradients, ChannelMode, InterruptionModel, HEAD_WIDTHS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// Share of examples held out for validation (0 disables validation).
    pub validation_fraction: f64,
    pub channel_mode: ChannelMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0015,
            batch_size: 32,
            max_epochs: 200,
            patience: Some(10),
            validation_fraction: 0.1,
            channel_mode: ChannelMode::Both,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub input: LayeredEmbedding,
    pub label: Class,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<EpochLoss>,
    /// Epoch whose parameters were returned (1-based).
    pub best_epoch: usize,
    pub steps: usize,
    pub train_examples: usize,
    pub val_examples: usize,
}

fn mean_loss(model: &InterruptionModel, set: &[&Example]) -> Result<f64> {
    let mut total = 0.0;
    for ex in set {
        let logits = model.logits(&ex.input)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - logits[ex.label.index()];
    }
    Ok(total / set.len() as f64)
}

/// Trains a fresh model.
///
/// `profile = None` sizes the model from the first example, for ad-hoc inputs.
pub fn train(
    examples: &[Example],
    profile: Option<FeatureProfile>,
    config: &TrainConfig,
) -> Result<(InterruptionModel, TrainReport)> {
    let first = examples.first().ok_or_else(|| Error::InvalidInput("empty training set".into()))?;
    let model = match profile {
        Some(p) => InterruptionModel::for_profile(p, config.channel_mode, config.seed),
        None => InterruptionModel::with_shape(
            first.input.layers(),
            first.input.dim(),
            &HEAD_WIDTHS,
            config.channel_mode,
            config.seed,
        ),
    };
    train_from(model, examples, config)
}

/// Continues training `model` on `examples`.
pub fn train_from(
    mut model: InterruptionModel,
    examples: &[Example],
    config: &TrainConfig,
) -> Result<(InterruptionModel, TrainReport)> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidInput(format!("learning rate {} is invalid", config.learning_rate)));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    for ex in examples {
        model.check_input(&ex.input)?;
    }

    let mut order: Vec<&Example> = examples.iter().collect();
    order.shuffle(&mut rng::stream(config.seed, "validation-split"));
    let n_val = if examples.len() >= 10 {
        ((examples.len() as f64) * config.validation_fraction).round() as usize
    } else {
        0
    };
    let (val, mut train_set) = {
        let (v, t) = order.split_at(n_val);
        (v.to_vec(), t.to_vec())
    };
    if train_set.is_empty() {
        return Err(Error::InvalidInput("validation split leaves no training examples".into()));
    }

    let mut shuffler = rng::stream(config.seed, "epoch-shuffle");
    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, InterruptionModel)> = None;
    let mut steps = 0;
    for epoch in 1..=config.max_epochs {
        train_set.shuffle(&mut shuffler);
        let mut epoch_loss = 0.0;
        for batch in train_set.chunks(config.batch_size) {
            let pairs: Vec<(&LayeredEmbedding, Class)> = batch.iter().map(|e| (&e.input, e.label)).collect();
            let (loss, grads) = gradients(&model, &pairs).map_err(|e| {
                Error::Diverged(format!("epoch {epoch}, step {steps}: {e}"))
            })?;
            epoch_loss += loss * batch.len() as f64;
            apply_gradients(&mut model, &grads, config.learning_rate);
            steps += 1;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged(format!("epoch {epoch}: train loss {train_loss}")));
        }
        let val_loss = if val.is_empty() { None } else { Some(mean_loss(&model, &val)?) };
        curve.push(EpochLoss { epoch, train_loss, val_loss });
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:?}");

        let Some(v) = val_loss else { continue };
        if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            best = Some((v, epoch, model.clone()));
        }
        if let (Some(patience), Some((_, best_epoch, _))) = (config.patience, &best) {
            if epoch - best_epoch >= patience {
                break;
            }
        }
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, curve.len()),
    };
    let report = TrainReport {
        curve,
        best_epoch,
        steps,
        train_examples: train_set.len(),
        val_examples: val.len(),
    };
    Ok((model, report))
}
