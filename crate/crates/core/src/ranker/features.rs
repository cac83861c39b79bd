use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::control::{control_scores, ControlAttribute, ControlScoreVector, SatisfactionMatrix};
use crate::corpus::{Bucketings, Item};
use crate::error::{Error, Result};
use crate::retrieval::{RankingInstance, TransitionModel};

pub const FEATURE_DIM: usize = 12;

/// Feature layout, in order:
///
/// | idx | feature |
/// |-----|---------|
/// | 0 | matched tokens / max(N_C, 1) |
/// | 1..=4 | match flag for price, rank, brand, category (0 when uncontrolled) |
/// | 5 | retrieval score, min-max normalized within the instance |
/// | 6 | 1 / retrieval position |
/// | 7..=9 | share of history items with the same brand / price bucket / a shared category |
/// | 10 | standardized log(1 + popularity) |
/// | 11 | bias |
pub type FeatureVector = [f64; FEATURE_DIM];

/// Popularity standardization fitted on the training catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub log_pop_mean: f64,
    pub log_pop_std: f64,
}

impl TrainStats {
    pub fn from_retriever(model: &TransitionModel) -> Self {
        let logs: Vec<f64> = model.catalogue().iter().map(|id| (model.popularity(id) as f64).ln_1p()).collect();
        if logs.is_empty() {
            return TrainStats { log_pop_mean: 0.0, log_pop_std: 1.0 };
        }
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        TrainStats { log_pop_mean: mean, log_pop_std: if std > 0.0 { std } else { 1.0 } }
    }
}

/// Everything feature extraction needs besides the instance itself.
#[derive(Clone, Copy)]
pub struct FeatureContext<'a> {
    pub items: &'a BTreeMap<String, Item>,
    pub bucketings: &'a Bucketings,
    pub retriever: &'a TransitionModel,
    pub stats: TrainStats,
}

/// Features plus the control-score supervision of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurized {
    pub features: Vec<FeatureVector>,
    pub satisfaction: SatisfactionMatrix,
    pub scores: ControlScoreVector,
}

fn same_brand(a: &Item, b: &Item) -> bool {
    match (&a.brand, &b.brand) {
        (Some(x), Some(y)) => x.to_lowercase() == y.to_lowercase(),
        _ => false,
    }
}

fn share_category(a: &Item, b: &Item) -> bool {
    a.categories.iter().any(|c| b.categories.iter().any(|d| c.to_lowercase() == d.to_lowercase()))
}

pub fn featurize(instance: &RankingInstance, ctx: &FeatureContext<'_>) -> Result<Featurized> {
    let lookup = |id: &String| ctx.items.get(id).ok_or_else(|| Error::UnknownItem(id.clone()));
    let candidates = instance.candidates.iter().map(lookup).collect::<Result<Vec<_>>>()?;
    let history = instance.history.iter().map(lookup).collect::<Result<Vec<_>>>()?;
    let (satisfaction, scores) = control_scores(&candidates, &instance.tokens, instance.gt_index, ctx.bucketings)?;

    let n_c = instance.tokens.len();
    let (lo, hi) = instance
        .retrieval_scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let price_bucket = |item: &Item| -> Result<Option<String>> {
        match ctx.bucketings.0.contains_key(&ControlAttribute::Price) {
            true => Ok(ctx.bucketings.label_of(item, ControlAttribute::Price)?.map(str::to_owned)),
            false => Ok(None),
        }
    };
    let history_buckets = history.iter().map(|h| price_bucket(h)).collect::<Result<Vec<_>>>()?;
    let h_len = history.len().max(1) as f64;

    let mut features = Vec::with_capacity(candidates.len());
    for (i, item) in candidates.iter().enumerate() {
        let mut f = [0.0; FEATURE_DIM];
        f[0] = satisfaction.matched[i] as f64 / n_c.max(1) as f64;
        for (k, token) in instance.tokens.iter().enumerate() {
            if satisfaction.entries[i][k] {
                f[1 + token.attribute.index()] = 1.0;
            }
        }
        let s = instance.retrieval_scores[i];
        f[5] = if hi > lo { (s - lo) / (hi - lo) } else { 0.0 };
        f[6] = 1.0 / (i + 1) as f64;
        let bucket = price_bucket(item)?;
        f[7] = history.iter().filter(|h| same_brand(h, item)).count() as f64 / h_len;
        f[8] = match &bucket {
            Some(b) => history_buckets.iter().filter(|hb| hb.as_ref() == Some(b)).count() as f64 / h_len,
            None => 0.0,
        };
        f[9] = history.iter().filter(|h| share_category(h, item)).count() as f64 / h_len;
        let log_pop = (ctx.retriever.popularity(&item.item_id) as f64).ln_1p();
        f[10] = (log_pop - ctx.stats.log_pop_mean) / ctx.stats.log_pop_std;
        f[11] = 1.0;
        if let Some(pos) = f.iter().position(|x| !x.is_finite()) {
            return Err(Error::format("features", format!("non-finite feature {pos} for {}", item.item_id)));
        }
        features.push(f);
    }
    Ok(Featurized { features, satisfaction, scores })
}

pub fn extract_features(instance: &RankingInstance, ctx: &FeatureContext<'_>) -> Result<Vec<FeatureVector>> {
    featurize(instance, ctx).map(|f| f.features)
}
