use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{featurize, FeatureContext, FeatureVector};
use super::loss::{build_pairs, ranknet_loss_and_grad, PairSet};
use super::model::ScorerModel;
use super::rank_order;
use crate::error::{Error, Result};
use crate::retrieval::RankingInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Decoupled: `theta <- theta * (1 - lr * wd) - lr * grad`.
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.05, epochs: 3, batch_size: 32, weight_decay: 1e-4, warmup_fraction: 0.02, seed: 7 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.epochs >= 1
            && self.batch_size >= 1
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.warmup_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training config {self:?}")))
        }
    }

    /// Linear warmup over the first `warmup_fraction` of steps, then cosine
    /// decay to zero.
    pub fn learning_rate_at(&self, step: usize, total_steps: usize) -> f64 {
        let warmup = (self.warmup_fraction * total_steps as f64).ceil() as usize;
        if step < warmup {
            return self.learning_rate * (step + 1) as f64 / warmup as f64;
        }
        let span = total_steps.saturating_sub(warmup).max(1) as f64;
        let progress = ((step - warmup) as f64 / span).min(1.0);
        self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub contributing: usize,
    pub valid_hit_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Checkpoint with the best validation hit rate (final model when no
    /// validation set is given).
    pub model: ScorerModel,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    /// Instances whose pair set was empty.
    pub skipped: usize,
}

struct Prepared {
    features: Vec<FeatureVector>,
    pairs: PairSet,
    retrieval: Vec<f64>,
    gt_index: Option<usize>,
}

fn prepare(instances: &[RankingInstance], ctx: &FeatureContext<'_>) -> Result<Vec<Prepared>> {
    instances
        .par_iter()
        .map(|inst| {
            let f = featurize(inst, ctx)?;
            Ok(Prepared {
                pairs: build_pairs(&f.scores),
                features: f.features,
                retrieval: inst.retrieval_scores.clone(),
                gt_index: inst.gt_index,
            })
        })
        .collect()
}

fn instance_grad(model: &ScorerModel, p: &Prepared) -> Result<Option<(f64, Vec<f64>)>> {
    if p.pairs.is_empty() {
        return Ok(None);
    }
    let scores = model.score(&p.features)?;
    let out = ranknet_loss_and_grad(&scores, &p.pairs)?;
    let mut grad = vec![0.0; model.params.len()];
    for (x, &ds) in p.features.iter().zip(&out.grad) {
        if ds != 0.0 {
            model.accumulate_grad(x, ds, &mut grad);
        }
    }
    Ok(Some((out.loss, grad)))
}

fn hit_rate(model: &ScorerModel, valid: &[Prepared], k: usize) -> Result<f64> {
    let hits = valid
        .par_iter()
        .map(|p| {
            let scores = model.score(&p.features)?;
            let order = rank_order(&scores, &p.retrieval);
            Ok(match p.gt_index {
                Some(g) => usize::from(order.iter().position(|&i| i == g).is_some_and(|pos| pos < k)),
                None => 0,
            })
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / valid.len() as f64)
}

/// Mini-batch gradient descent on the mean pairwise loss. Per-instance
/// gradients may be computed in parallel but are summed in batch order,
/// so results do not depend on the number of worker threads.
pub fn train(
    model: ScorerModel,
    train_instances: &[RankingInstance],
    valid_instances: &[RankingInstance],
    config: &TrainConfig,
    ctx: &FeatureContext<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let prepared = prepare(train_instances, ctx)?;
    let skipped = prepared.iter().filter(|p| p.pairs.is_empty()).count();
    if skipped == prepared.len() {
        return Err(Error::NoTrainablePairs);
    }
    let valid = prepare(valid_instances, ctx)?;

    let mut model = model;
    let steps_per_epoch = prepared.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut step = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ScorerModel)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut contributing = 0;
        for batch in order.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| instance_grad(&model, &prepared[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; model.params.len()];
            let mut n = 0;
            for (loss, g) in results.into_iter().flatten() {
                loss_sum += loss;
                n += 1;
                for (acc, v) in grad.iter_mut().zip(&g) {
                    *acc += v;
                }
            }
            let lr = config.learning_rate_at(step, total_steps);
            step += 1;
            if n == 0 {
                continue;
            }
            contributing += n;
            let inv = 1.0 / n as f64;
            let decay = 1.0 - lr * config.weight_decay;
            for (w, g) in model.params.iter_mut().zip(&grad) {
                *w = *w * decay - lr * (g * inv);
            }
        }

        let valid_hit_rate = if valid.is_empty() { None } else { Some(hit_rate(&model, &valid, 3)?) };
        history.push(EpochStats {
            epoch: epoch + 1,
            mean_loss: loss_sum / contributing.max(1) as f64,
            contributing,
            valid_hit_rate,
        });
        if let Some(hr) = valid_hit_rate {
            if best.as_ref().is_none_or(|(b, _, _)| hr >= *b) {
                best = Some((hr, epoch + 1, model.clone()));
            }
        }
    }

    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, config.epochs),
    };
    Ok(TrainOutcome { model, best_epoch, history, skipped })
}
