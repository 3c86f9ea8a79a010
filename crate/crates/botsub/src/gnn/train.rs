//! Mini-batch training loop and split evaluation.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Batch, GnnConfig, GnnModel, SubgraphTensors};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::LabelSet;
use crate::sampler::SubgraphCache;

#[derive(Debug, Clone, Serialize)]
pub struct TrainEntry {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: GnnModel,
    pub log: Vec<TrainEntry>,
    /// Training hit a non-finite loss and returned the last good
    /// checkpoint instead of finishing normally.
    pub diverged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub n: usize,
}

fn tensors_for(
    cache: &SubgraphCache,
    features: &FeatureMatrix,
    ids: &[usize],
    what: &str,
) -> Result<HashMap<usize, SubgraphTensors>> {
    let by_start: HashMap<usize, &crate::sampler::BiasedSubgraph> =
        cache.subgraphs.iter().map(|s| (s.start, s)).collect();
    let mut out = HashMap::with_capacity(ids.len());
    for &v in ids {
        let sub = by_start.get(&v).ok_or_else(|| {
            Error::InvalidData(format!("subgraph cache does not cover {what} node {v}"))
        })?;
        out.insert(v, SubgraphTensors::from_subgraph(sub, features)?);
    }
    Ok(out)
}

fn labels_of(labels: &LabelSet, ids: &[usize], what: &str) -> Result<Vec<u8>> {
    ids.iter()
        .map(|&v| {
            labels
                .label(v)
                .map(|l| l.as_u8())
                .ok_or_else(|| Error::InvalidData(format!("{what} node {v} is unlabeled")))
        })
        .collect()
}

/// Mini-batch gradient descent with early stopping on validation loss.
/// Deterministic for a fixed seed: batches are shuffled from a seeded rng,
/// dropout masks are drawn from per-subgraph seeds issued in batch order,
/// and gradient reductions are folded in a fixed order, so the result is
/// identical for any `workers` setting.
pub fn train(
    cache: &SubgraphCache,
    features: &FeatureMatrix,
    labels: &LabelSet,
    cfg: &GnnConfig,
) -> Result<TrainOutcome> {
    if labels.train.is_empty() {
        return Err(Error::InvalidData("empty train split".into()));
    }
    if labels.val.is_empty() {
        return Err(Error::InvalidData("empty validation split".into()));
    }
    let needed: Vec<usize> = labels
        .train
        .iter()
        .chain(labels.val.iter())
        .copied()
        .collect();
    let tensors = tensors_for(cache, features, &needed, "train/val")?;
    let val_labels = labels_of(labels, &labels.val, "validation")?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;

    pool.install(|| {
        let mut model = GnnModel::init(features.width(), &cache.relation_names, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = labels.train.to_vec();
        let mut best: Option<(f64, GnnModel)> = None;
        let mut stale = 0usize;
        let mut log = Vec::new();

        for epoch in 0..cfg.max_epochs {
            order.shuffle(&mut rng);
            let mut epoch_ce = 0.0;
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let subgraphs: Vec<&SubgraphTensors> =
                    chunk.iter().map(|v| &tensors[v]).collect();
                let ys = labels_of(labels, chunk, "train")?;
                let batch = Batch::new(subgraphs, ys)?;
                let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.gen()).collect();
                let mask = (cfg.dropout > 0.0).then_some((seeds.as_slice(), cfg.dropout));
                let (ce, _, grads) = model.forward_backward(&batch, mask)?;
                if !ce.is_finite() {
                    return match best {
                        Some((_, checkpoint)) => Ok(TrainOutcome {
                            model: checkpoint,
                            log,
                            diverged: true,
                        }),
                        None => Err(Error::Diverged(format!(
                            "non-finite training loss at epoch {epoch} before any checkpoint"
                        ))),
                    };
                }
                epoch_ce += ce;
                model.apply_update(&grads, 1.0 / batch.len() as f64, cfg.reg_lambda, cfg.lr);
            }

            let (val_loss, val_accuracy) =
                validation_metrics(&model, &tensors, labels, &val_labels, cfg)?;
            log.push(TrainEntry {
                epoch,
                train_loss: epoch_ce / labels.train.len() as f64,
                val_loss,
                val_accuracy,
            });
            if !val_loss.is_finite() {
                return match best {
                    Some((_, checkpoint)) => Ok(TrainOutcome {
                        model: checkpoint,
                        log,
                        diverged: true,
                    }),
                    None => Err(Error::Diverged(format!(
                        "non-finite validation loss at epoch {epoch}"
                    ))),
                };
            }
            match &best {
                Some((best_loss, _)) if val_loss >= best_loss - 1e-9 => {
                    stale += 1;
                    if stale >= cfg.patience {
                        break;
                    }
                }
                _ => {
                    best = Some((val_loss, model.clone()));
                    stale = 0;
                }
            }
        }
        let model = best.map(|(_, m)| m).unwrap_or(model);
        Ok(TrainOutcome {
            model,
            log,
            diverged: false,
        })
    })
}

fn validation_metrics(
    model: &GnnModel,
    tensors: &HashMap<usize, SubgraphTensors>,
    labels: &LabelSet,
    val_labels: &[u8],
    cfg: &GnnConfig,
) -> Result<(f64, f64)> {
    let mut ce = 0.0;
    let mut hits = 0usize;
    for (chunk, ys) in labels
        .val
        .chunks(cfg.batch_size.max(1))
        .zip(val_labels.chunks(cfg.batch_size.max(1)))
    {
        let subgraphs: Vec<&SubgraphTensors> = chunk.iter().map(|v| &tensors[v]).collect();
        let batch = Batch::new(subgraphs, ys.to_vec())?;
        let (probs, _) = model.forward_batch(&batch)?;
        for (row, &y) in probs.rows().into_iter().zip(ys) {
            let p = row[y as usize].clamp(1e-12, 1.0);
            ce -= p.ln();
            let pred = u8::from(row[1] > row[0]);
            hits += usize::from(pred == y);
        }
    }
    Ok((
        ce / val_labels.len() as f64,
        hits as f64 / val_labels.len() as f64,
    ))
}

/// Accuracy and binary F1 (bot = positive class) over one split.
/// Evaluation is dropout-free and processes nodes in split order, so
/// repeated calls agree bit-exactly.
pub fn evaluate(
    model: &GnnModel,
    cache: &SubgraphCache,
    features: &FeatureMatrix,
    labels: &LabelSet,
    split: &str,
    batch_size: usize,
) -> Result<Metrics> {
    let ids = labels.split(split)?;
    if ids.is_empty() {
        return Err(Error::InvalidData(format!("empty split `{split}`")));
    }
    let tensors = tensors_for(cache, features, ids, split)?;
    let ys = labels_of(labels, ids, split)?;

    let mut preds = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(batch_size.max(1)) {
        let subgraphs: Vec<&SubgraphTensors> = chunk.iter().map(|v| &tensors[v]).collect();
        let batch = Batch::new(subgraphs, vec![0; chunk.len()])?;
        let (probs, _) = model.forward_batch(&batch)?;
        preds.extend(
            probs
                .rows()
                .into_iter()
                .map(|row| u8::from(row[1] > row[0])),
        );
    }
    Ok(classification_metrics(&preds, &ys))
}

pub fn classification_metrics(preds: &[u8], ys: &[u8]) -> Metrics {
    let n = ys.len();
    let mut hits = 0usize;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &y) in preds.iter().zip(ys) {
        hits += usize::from(p == y);
        match (p, y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Metrics {
        accuracy: hits as f64 / n as f64,
        f1,
        n,
    }
}
