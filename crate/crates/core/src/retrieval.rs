//! First-stage candidate retrieval with a recency-weighted first-order
//! transition model plus popularity smoothing, and construction of
//! ranking instances (candidates, retrieval scores, control tokens).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{sample_tokens, sample_tokens_anchored, ControlScheme, ControlToken};
use crate::corpus::{Bucketings, Item, SequenceWindow, Split};
use crate::error::{Error, Result};

const RETRIEVER_VERSION: u32 = 1;

/// Transition counts between consecutive items and item popularity, both
/// counted over training windows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RetrieverDoc", into = "RetrieverDoc")]
pub struct TransitionModel {
    pub alpha: f64,
    pub gamma: f64,
    /// Catalogue in sorted order; positions are the internal item indices.
    items: Vec<String>,
    /// Outgoing transitions per source index, sorted by target index.
    transitions: Vec<Vec<(u32, u64)>>,
    popularity: Vec<u64>,
    index: HashMap<String, u32>,
    out_totals: Vec<u64>,
    /// Indices by (popularity desc, item id asc).
    pop_order: Vec<u32>,
    max_popularity: u64,
}

#[derive(Serialize, Deserialize)]
struct RetrieverDoc {
    version: u32,
    alpha: f64,
    gamma: f64,
    items: Vec<String>,
    popularity: Vec<u64>,
    transitions: Vec<Vec<(u32, u64)>>,
}

impl TryFrom<RetrieverDoc> for TransitionModel {
    type Error = Error;

    fn try_from(doc: RetrieverDoc) -> Result<Self> {
        if doc.version != RETRIEVER_VERSION {
            return Err(Error::Version { what: "retriever".into(), found: doc.version, expected: RETRIEVER_VERSION });
        }
        let n = doc.items.len();
        let consistent = doc.popularity.len() == n
            && doc.transitions.len() == n
            && doc.transitions.iter().flatten().all(|&(t, _)| (t as usize) < n);
        if !consistent {
            return Err(Error::format("retriever", "inconsistent table sizes"));
        }
        Ok(TransitionModel::from_parts(doc.alpha, doc.gamma, doc.items, doc.transitions, doc.popularity))
    }
}

impl From<TransitionModel> for RetrieverDoc {
    fn from(m: TransitionModel) -> Self {
        RetrieverDoc {
            version: RETRIEVER_VERSION,
            alpha: m.alpha,
            gamma: m.gamma,
            items: m.items,
            popularity: m.popularity,
            transitions: m.transitions,
        }
    }
}

impl TransitionModel {
    fn from_parts(
        alpha: f64,
        gamma: f64,
        items: Vec<String>,
        transitions: Vec<Vec<(u32, u64)>>,
        popularity: Vec<u64>,
    ) -> Self {
        let index = items.iter().enumerate().map(|(i, id)| (id.clone(), i as u32)).collect();
        let out_totals = transitions.iter().map(|row| row.iter().map(|&(_, c)| c).sum()).collect();
        let mut pop_order: Vec<u32> = (0..items.len() as u32).collect();
        pop_order.sort_by(|&a, &b| {
            popularity[b as usize].cmp(&popularity[a as usize]).then_with(|| items[a as usize].cmp(&items[b as usize]))
        });
        let max_popularity = popularity.iter().copied().max().unwrap_or(0);
        TransitionModel { alpha, gamma, items, transitions, popularity, index, out_totals, pop_order, max_popularity }
    }

    pub fn catalogue(&self) -> &[String] {
        &self.items
    }

    pub fn popularity(&self, item_id: &str) -> u64 {
        self.index.get(item_id).map_or(0, |&i| self.popularity[i as usize])
    }

    pub fn transition_count(&self, from: &str, to: &str) -> u64 {
        let (Some(&a), Some(&b)) = (self.index.get(from), self.index.get(to)) else {
            return 0;
        };
        let row = &self.transitions[a as usize];
        row.binary_search_by_key(&b, |&(t, _)| t).map_or(0, |pos| row[pos].1)
    }

    fn popularity_part(&self, idx: Option<u32>) -> f64 {
        match idx {
            Some(i) if self.max_popularity > 0 => {
                self.alpha * (self.popularity[i as usize] as f64 / self.max_popularity as f64)
            }
            _ => 0.0,
        }
    }

    fn recency_weight(&self, len: usize, position: usize) -> f64 {
        self.gamma.powi((len - 1 - position) as i32)
    }

    /// `sum_p gamma^(L-1-p) * count(h_p -> item) / out(h_p) + alpha * pop(item) / max_pop`.
    pub fn score_next(&self, history: &[String], item: &str) -> f64 {
        let target = self.index.get(item).copied();
        let mut acc = 0.0;
        if let Some(t) = target {
            for (p, h) in history.iter().enumerate() {
                let Some(&src) = self.index.get(h) else { continue };
                let row = &self.transitions[src as usize];
                if let Ok(pos) = row.binary_search_by_key(&t, |&(x, _)| x) {
                    let total = self.out_totals[src as usize] as f64;
                    acc += self.recency_weight(history.len(), p) * (row[pos].1 as f64 / total);
                }
            }
        }
        acc + self.popularity_part(target)
    }

    fn order(&self, a: &(u32, f64), b: &(u32, f64)) -> std::cmp::Ordering {
        b.1.total_cmp(&a.1)
            .then_with(|| self.popularity[b.0 as usize].cmp(&self.popularity[a.0 as usize]))
            .then_with(|| self.items[a.0 as usize].cmp(&self.items[b.0 as usize]))
    }

    /// Top-`k` items by [`score_next`](Self::score_next), excluding the
    /// history. Ties go to the more popular item, then the smaller id.
    pub fn retrieve_candidates(&self, history: &[String], k: usize) -> Result<(Vec<String>, Vec<f64>)> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!("K must be >= 2, got {k}")));
        }
        let excluded: BTreeSet<u32> = history.iter().filter_map(|h| self.index.get(h).copied()).collect();
        let available = self.items.len() - excluded.len();
        if available < k {
            return Err(Error::CatalogueTooSmall { available, k });
        }

        // Items reachable from the history carry a transition term; all
        // others score alpha * popularity and are already ordered by pop_order.
        let mut support: BTreeMap<u32, f64> = BTreeMap::new();
        for (p, h) in history.iter().enumerate() {
            let Some(&src) = self.index.get(h) else { continue };
            let total = self.out_totals[src as usize] as f64;
            let w = self.recency_weight(history.len(), p);
            for &(t, c) in &self.transitions[src as usize] {
                *support.entry(t).or_insert(0.0) += w * (c as f64 / total);
            }
        }
        let mut scored: Vec<(u32, f64)> = support
            .iter()
            .filter(|(t, _)| !excluded.contains(t))
            .map(|(&t, &acc)| (t, acc + self.popularity_part(Some(t))))
            .collect();
        let fill = self
            .pop_order
            .iter()
            .filter(|i| !excluded.contains(i) && !support.contains_key(i))
            .take(k)
            .map(|&i| (i, 0.0 + self.popularity_part(Some(i))));
        scored.extend(fill);
        scored.sort_by(|a, b| self.order(a, b));
        scored.truncate(k);
        Ok(scored.into_iter().map(|(i, s)| (self.items[i as usize].clone(), s)).unzip())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::format("retriever", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("retriever", e))
    }
}

/// Counts transitions over consecutive pairs of each window's history
/// followed by its target, and popularity over every item occurrence.
/// Windows outside the training split are ignored.
pub fn fit_retriever(windows: &[SequenceWindow], alpha: f64, gamma: f64) -> Result<TransitionModel> {
    if alpha.is_nan() || alpha < 0.0 || !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("need alpha >= 0 and gamma in (0, 1], got {alpha}, {gamma}")));
    }
    let train: Vec<&SequenceWindow> = windows.iter().filter(|w| w.split == Split::Train).collect();
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training windows to fit the retriever".into()));
    }
    let mut pairs: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    let mut pop: BTreeMap<&str, u64> = BTreeMap::new();
    for w in &train {
        let seq: Vec<&str> = w.history.iter().chain(std::iter::once(&w.target)).map(String::as_str).collect();
        for id in &seq {
            *pop.entry(id).or_insert(0) += 1;
        }
        for p in seq.windows(2) {
            *pairs.entry((p[0], p[1])).or_insert(0) += 1;
        }
    }
    let items: Vec<String> = pop.keys().map(|s| s.to_string()).collect();
    let index: HashMap<&str, u32> = pop.keys().enumerate().map(|(i, &s)| (s, i as u32)).collect();
    let mut transitions = vec![Vec::new(); items.len()];
    for ((a, b), c) in pairs {
        transitions[index[a] as usize].push((index[b], c));
    }
    for row in &mut transitions {
        row.sort_unstable();
    }
    let popularity = pop.values().copied().collect();
    Ok(TransitionModel::from_parts(alpha, gamma, items, transitions, popularity))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtPolicy {
    /// Ground truth marked only when retrieval returned it.
    AsRetrieved,
    /// Ground truth replaces the lowest-scored candidate when missing.
    InjectGt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TokenPolicy {
    Uniform,
    GtAnchored { violation_rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOptions {
    pub scheme: ControlScheme,
    pub k: usize,
    pub train_policy: GtPolicy,
    pub eval_policy: GtPolicy,
    pub token_policy: TokenPolicy,
    pub seed: u64,
}

impl InstanceOptions {
    pub fn policy_for(&self, split: Split) -> GtPolicy {
        match split {
            Split::Train => self.train_policy,
            Split::Valid | Split::Test => self.eval_policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingInstance {
    pub user_id: String,
    pub history: Vec<String>,
    pub target: String,
    pub candidates: Vec<String>,
    pub retrieval_scores: Vec<f64>,
    pub tokens: Vec<ControlToken>,
    pub gt_index: Option<usize>,
    pub split: Split,
}

impl RankingInstance {
    pub fn resolve<'a>(&self, items: &'a BTreeMap<String, Item>) -> Result<Vec<&'a Item>> {
        self.candidates.iter().map(|id| items.get(id).ok_or_else(|| Error::UnknownItem(id.clone()))).collect()
    }
}

/// Retrieves candidates for each window, places the ground truth according
/// to the split's policy and samples control tokens. The window's position
/// in `windows` is the token-sampling ordinal, and output order equals
/// input order regardless of thread count.
pub fn build_instances(
    windows: &[SequenceWindow],
    model: &TransitionModel,
    items: &BTreeMap<String, Item>,
    bucketings: &Bucketings,
    opts: &InstanceOptions,
) -> Result<Vec<RankingInstance>> {
    if opts.k > 26 {
        return Err(Error::TooManyCandidates(opts.k));
    }
    windows
        .par_iter()
        .enumerate()
        .map(|(ordinal, w)| build_one(w, ordinal as u64, model, items, bucketings, opts))
        .collect()
}

fn build_one(
    w: &SequenceWindow,
    ordinal: u64,
    model: &TransitionModel,
    items: &BTreeMap<String, Item>,
    bucketings: &Bucketings,
    opts: &InstanceOptions,
) -> Result<RankingInstance> {
    let (mut candidates, mut scores) = model.retrieve_candidates(&w.history, opts.k)?;
    let mut gt_index = candidates.iter().position(|c| c == &w.target);
    // A repeat purchase of a history item is never a candidate.
    let target_in_history = w.history.contains(&w.target);
    if gt_index.is_none() && !target_in_history && opts.policy_for(w.split) == GtPolicy::InjectGt {
        let last = candidates.len() - 1;
        candidates[last] = w.target.clone();
        scores[last] = model.score_next(&w.history, &w.target);
        gt_index = Some(last);
    }
    let resolved: Vec<&Item> =
        candidates.iter().map(|id| items.get(id).ok_or_else(|| Error::UnknownItem(id.clone()))).collect::<Result<_>>()?;
    let tokens = match (opts.token_policy, gt_index) {
        (TokenPolicy::GtAnchored { violation_rate }, Some(g)) => {
            sample_tokens_anchored(&resolved, g, &opts.scheme, bucketings, violation_rate, opts.seed, ordinal)?
        }
        _ => sample_tokens(&resolved, &opts.scheme, bucketings, opts.seed, ordinal)?,
    };
    Ok(RankingInstance {
        user_id: w.user_id.clone(),
        history: w.history.clone(),
        target: w.target.clone(),
        candidates,
        retrieval_scores: scores,
        tokens,
        gt_index,
        split: w.split,
    })
}
