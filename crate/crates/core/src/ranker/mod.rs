//! Trainable candidate re-ranker: per-candidate features, a small scorer,
//! the pairwise loss over control scores, training and re-ranking.

mod features;
mod loss;
mod model;
mod train;

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use features::{extract_features, featurize, FeatureContext, FeatureVector, Featurized, TrainStats, FEATURE_DIM};
pub use loss::{build_pairs, build_pairs_from, ranknet_loss_and_grad, PairSet, RankNetOutput};
pub use model::{Architecture, ScorerModel};
pub use train::{train, EpochStats, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::retrieval::RankingInstance;

/// Candidate indices sorted by score descending, then retrieval score
/// descending, then original position.
pub fn rank_order(scores: &[f64], retrieval: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| retrieval[b].total_cmp(&retrieval[a]))
            .then(a.cmp(&b))
    });
    order
}

/// One row of a re-ranked list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    /// Position in the retrieved candidate list.
    pub candidate_index: usize,
    pub item_id: String,
    pub score: f64,
    pub r: u32,
    pub satisfied: Vec<bool>,
    pub retrieval_score: f64,
}

/// Scores candidates and returns them best first. Entry 0 is the argmax.
pub fn rerank(model: &ScorerModel, instance: &RankingInstance, ctx: &FeatureContext<'_>) -> Result<Vec<RankedEntry>> {
    let f = featurize(instance, ctx)?;
    let scores = model.score(&f.features)?;
    Ok(entries_in_order(instance, &f, &scores, &rank_order(&scores, &instance.retrieval_scores)))
}

pub(crate) fn entries_in_order(
    instance: &RankingInstance,
    f: &Featurized,
    scores: &[f64],
    order: &[usize],
) -> Vec<RankedEntry> {
    order
        .iter()
        .map(|&i| RankedEntry {
            candidate_index: i,
            item_id: instance.candidates[i].clone(),
            score: scores[i],
            r: f.scores.scores[i],
            satisfied: f.satisfaction.entries[i].clone(),
            retrieval_score: instance.retrieval_scores[i],
        })
        .collect()
}

/// Fraction of pairs `(i, j)` (with `r_i > r_j`) that the scores order
/// strictly correctly, and the number of pairs counted.
pub fn pair_accuracy(scores: &[f64], pairs: &PairSet) -> (usize, usize) {
    let correct = pairs.pairs.iter().filter(|&&(i, j)| scores[i].total_cmp(&scores[j]) == Ordering::Greater).count();
    (correct, pairs.len())
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ScorerModel,
    pub train_stats: TrainStats,
    pub config: TrainConfig,
    pub seed: u64,
    pub config_hash: String,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

impl Checkpoint {
    pub fn new(outcome: &TrainOutcome, train_stats: TrainStats, config: &TrainConfig, config_hash: &str) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model: outcome.model.clone(),
            train_stats,
            config: config.clone(),
            seed: config.seed,
            config_hash: config_hash.to_owned(),
            best_epoch: outcome.best_epoch,
            history: outcome.history.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| Error::format("checkpoint", e))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Version { what: "checkpoint".into(), found: c.version, expected: CHECKPOINT_VERSION });
        }
        let expected = ScorerModel::n_params(c.model.architecture, c.model.dim);
        if c.model.params.len() != expected {
            return Err(Error::DimensionMismatch { expected, actual: c.model.params.len() });
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
