//! Mini-batch training with validation-based checkpoint selection.

use rand::seq::SliceRandom;

use crate::models::{EncodedMessage, ModelGraph};
use crate::nn::{adam_step, softmax_cross_entropy, AdamConfig, ParamStore};
use crate::{rng, Error, Result};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Fraction of examples held out for validation.
    pub val_fraction: f64,
    /// Optional cap on optimizer steps per epoch.
    pub max_steps_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 3,
            adam: AdamConfig::default(),
            val_fraction: 0.1,
            max_steps_per_epoch: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub steps: usize,
}

/// Trains `graph` on `(message, label)` examples. The split and batch order
/// are derived from the config seed and the model's name, so a fixed seed is
/// bit-reproducible. The best checkpoint by validation loss is restored into
/// `graph` before returning.
///
/// A non-finite training loss aborts with [`Error::NumericDivergence`] after
/// restoring the last finite parameter state.
pub fn train_model(
    graph: &mut ModelGraph,
    examples: &[(EncodedMessage, u8)],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet(graph.kind.to_string()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::InvalidConfig(
            "batch_size must be at least 2 (train-mode batch norm)".into(),
        ));
    }
    let label = graph.kind.to_string();

    let mut indices: Vec<usize> = (0..examples.len()).collect();
    indices.shuffle(&mut rng::stream(cfg.seed, &format!("split-{label}")));
    let n_val = ((examples.len() as f64 * cfg.val_fraction).round() as usize)
        .min(examples.len().saturating_sub(cfg.batch_size));
    let (val_idx, train_idx) = indices.split_at(n_val);
    if train_idx.len() < cfg.batch_size {
        return Err(Error::InvalidConfig(format!(
            "{} training examples cannot fill one batch of {}",
            train_idx.len(),
            cfg.batch_size
        )));
    }
    let val_msgs: Vec<EncodedMessage> = val_idx.iter().map(|&i| examples[i].0.clone()).collect();
    let val_labels: Vec<u8> = val_idx.iter().map(|&i| examples[i].1).collect();

    // Full-model training: the frozen sub-model outputs per message never
    // change, so compute them once up front.
    let all_msgs: Vec<EncodedMessage> = examples.iter().map(|(m, _)| m.clone()).collect();
    graph.cache_frozen_signals(&all_msgs)?;
    drop(all_msgs);

    let mut dropout_rng = rng::stream(cfg.seed, &format!("dropout-{label}"));
    let mut order: Vec<usize> = train_idx.to_vec();

    // The exponential running average in batch norm converges slowly at
    // small step counts, so running moments are re-estimated exactly over a
    // fixed slice of training data before each validation (and therefore
    // before every checkpoint snapshot).
    let recal_cap = (16 * cfg.batch_size).min(train_idx.len());
    let recal_msgs: Vec<EncodedMessage> = train_idx[..recal_cap]
        .iter()
        .map(|&i| examples[i].0.clone())
        .collect();

    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut last_finite: Option<ParamStore> = None;
    let mut epochs = Vec::new();
    let mut steps = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(
            cfg.seed,
            &format!("shuffle-{label}-{epoch}"),
        ));
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue; // train-mode batch norm needs at least two examples
            }
            if let Some(cap) = cfg.max_steps_per_epoch {
                if epoch_batches >= cap {
                    break;
                }
            }
            let msgs: Vec<EncodedMessage> = chunk.iter().map(|&i| examples[i].0.clone()).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| examples[i].1).collect();

            graph.store.zero_grads();
            let (logits, ctx) = graph.forward_train(&msgs, &mut dropout_rng)?;
            let ce = softmax_cross_entropy(&logits, &labels)?;
            let loss = ce.loss + graph.penalty();
            if !loss.is_finite() {
                if let Some(state) = last_finite.take() {
                    graph.store = state;
                }
                return Err(Error::NumericDivergence(format!(
                    "non-finite loss at epoch {epoch} step {steps} of {label} training"
                )));
            }
            graph.backward(&msgs, &ctx, &ce.d_logits)?;
            adam_step(&mut graph.store, &cfg.adam)?;
            last_finite = Some(graph.store.clone());
            epoch_loss += loss;
            epoch_batches += 1;
            steps += 1;
        }

        graph.recalibrate_bn(&recal_msgs, cfg.batch_size)?;
        let val_loss = if val_msgs.is_empty() {
            epoch_loss / epoch_batches.max(1) as f64
        } else {
            graph.eval_loss(&val_msgs, &val_labels)?
        };
        let train_loss = epoch_loss / epoch_batches.max(1) as f64;
        log::info!("{label}: epoch {epoch}: train_loss {train_loss:.5} val_loss {val_loss:.5}");
        epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, graph.store.clone()));
        }
    }

    let (best_val_loss, best_epoch, best_store) =
        best.ok_or_else(|| Error::InvalidConfig("no epochs ran".into()))?;
    graph.store = best_store;
    Ok(TrainReport {
        epochs,
        best_val_loss,
        best_epoch,
        steps,
    })
}

/// Fraction of examples the model classifies correctly (infer mode).
pub fn accuracy(graph: &ModelGraph, examples: &[(EncodedMessage, u8)]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let msgs: Vec<EncodedMessage> = examples.iter().map(|(m, _)| m.clone()).collect();
    let probs = graph.predict_probs(&msgs)?;
    let correct = probs
        .iter()
        .zip(examples)
        .filter(|(p, (_, label))| (**p >= 0.5) == (*label == 1))
        .count();
    Ok(correct as f64 / examples.len() as f64)
}
