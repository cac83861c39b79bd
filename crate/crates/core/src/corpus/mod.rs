//! Item metadata, user interaction histories, chronological splits and
//! sliding windows.
//!
//! A [`Corpus`] is built once by [`load_corpus`] (or the synthetic
//! generator), narrowed by [`preprocess`], and is read-only afterwards.

mod bucketing;
mod io;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::ControlAttribute;
use crate::error::{Error, Result};

pub use bucketing::{assign_bucket, fit_buckets, fit_corpus_bucketings, AttributeBucketing, Bucketings};
pub use io::{
    apply_tags, keyword_tags, load_corpus, load_tags, read_jsonl, write_corpus, write_jsonl,
    LoadStats,
};

/// Window size used throughout: five history items plus one target.
pub const DEFAULT_WINDOW: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub price: Option<f64>,
    #[serde(default, rename = "rank")]
    pub sales_rank: Option<u64>,
    #[serde(default)]
    pub brand: Option<String>,
    #[serde(default)]
    pub categories: Vec<String>,
}

impl Item {
    /// True when the attribute has a usable (non-blank) value.
    pub fn has_attribute(&self, attribute: ControlAttribute) -> bool {
        match attribute {
            ControlAttribute::Price => self.price.is_some_and(|p| p.is_finite() && p >= 0.0),
            ControlAttribute::Rank => self.sales_rank.is_some_and(|r| r > 0),
            ControlAttribute::Brand => self.brand.as_deref().is_some_and(|b| !b.trim().is_empty()),
            ControlAttribute::Category => self.categories.iter().any(|c| !c.trim().is_empty()),
        }
    }

    /// Numeric value of a bucketed attribute.
    pub fn numeric(&self, attribute: ControlAttribute) -> Option<f64> {
        match attribute {
            ControlAttribute::Price => self.price,
            ControlAttribute::Rank => self.sales_rank.map(|r| r as f64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub rating: u8,
    pub timestamp: i64,
}

impl Interaction {
    pub fn is_positive(&self) -> bool {
        self.rating > 3
    }
}

/// Chronological order: timestamp, then item id.
pub(crate) fn sort_chronologically(interactions: &mut [Interaction]) {
    interactions.sort_by(|a, b| {
        a.timestamp.cmp(&b.timestamp).then_with(|| a.item_id.cmp(&b.item_id))
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Per-user split boundaries: `[0, train_end)` is train,
/// `[train_end, valid_end)` valid and the rest test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMarks {
    pub train_end: usize,
    pub valid_end: usize,
}

impl SplitMarks {
    /// 80/10/10 by count; valid and test sizes are `ceil(n / 10)`.
    pub fn for_len(n: usize) -> Self {
        let tail = n.div_ceil(10);
        let n_test = tail.min(n);
        let n_valid = tail.min(n - n_test);
        SplitMarks { train_end: n - n_test - n_valid, valid_end: n - n_test }
    }

    pub fn split_of(&self, index: usize) -> Split {
        if index < self.train_end {
            Split::Train
        } else if index < self.valid_end {
            Split::Valid
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub items: BTreeMap<String, Item>,
    /// Interactions per user in chronological order.
    pub users: BTreeMap<String, Vec<Interaction>>,
    /// Empty until [`preprocess`] has run.
    pub splits: BTreeMap<String, SplitMarks>,
}

impl Corpus {
    pub fn n_interactions(&self) -> usize {
        self.users.values().map(Vec::len).sum()
    }

    pub fn item(&self, item_id: &str) -> Result<&Item> {
        self.items.get(item_id).ok_or_else(|| Error::UnknownItem(item_id.to_owned()))
    }

    pub fn split_of(&self, user_id: &str, index: usize) -> Split {
        self.splits.get(user_id).map_or(Split::Train, |m| m.split_of(index))
    }

    /// Interactions of every user that fall in the training split.
    pub fn train_interactions(&self) -> impl Iterator<Item = &Interaction> {
        self.users.iter().flat_map(move |(user, seq)| {
            let end = self.splits.get(user).map_or(seq.len(), |m| m.train_end);
            seq[..end].iter()
        })
    }

    /// Sliding windows over every user's history, in user order.
    pub fn windows(&self, w: usize) -> Vec<SequenceWindow> {
        self.users
            .iter()
            .flat_map(|(user, seq)| {
                let labelled: Vec<(String, Split)> = seq
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (x.item_id.clone(), self.split_of(user, i)))
                    .collect();
                sliding_windows(user, &labelled, w)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceWindow {
    pub user_id: String,
    pub history: Vec<String>,
    pub target: String,
    pub split: Split,
}

/// Emits `max(0, len - w + 1)` windows; the last item of each is the
/// target and determines the window's split.
pub fn sliding_windows(user_id: &str, history: &[(String, Split)], w: usize) -> Vec<SequenceWindow> {
    assert!(w >= 2, "window size must be at least 2");
    if history.len() < w {
        return Vec::new();
    }
    history
        .windows(w)
        .map(|win| {
            let (target, split) = win[w - 1].clone();
            SequenceWindow {
                user_id: user_id.to_owned(),
                history: win[..w - 1].iter().map(|(id, _)| id.clone()).collect(),
                target,
                split,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub min_interactions: usize,
    pub max_history: usize,
    /// Random user subsample drawn after filtering.
    pub max_users: Option<usize>,
    pub sample_seed: u64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions { min_interactions: 30, max_history: 50, max_users: None, sample_seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub dropped_non_positive: usize,
    pub dropped_missing_attribute: usize,
    pub dropped_short_users: usize,
    pub dropped_sampled_users: usize,
    pub truncated_interactions: usize,
}

/// Keeps positive interactions on items carrying every required attribute,
/// drops short users, optionally subsamples, truncates to the most recent
/// `max_history` interactions and marks the per-user split.
pub fn preprocess(
    corpus: &Corpus,
    required: &[ControlAttribute],
    opts: &PreprocessOptions,
) -> Result<(Corpus, PreprocessStats)> {
    if opts.min_interactions == 0 || opts.max_history < opts.min_interactions {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= min_interactions ({}) <= max_history ({})",
            opts.min_interactions, opts.max_history
        )));
    }
    let mut stats = PreprocessStats::default();
    let eligible = |item_id: &str| {
        corpus
            .items
            .get(item_id)
            .is_some_and(|item| required.iter().all(|&a| item.has_attribute(a)))
    };

    let mut users: BTreeMap<String, Vec<Interaction>> = BTreeMap::new();
    for (user, seq) in &corpus.users {
        let mut kept = Vec::with_capacity(seq.len());
        for x in seq {
            if !x.is_positive() {
                stats.dropped_non_positive += 1;
            } else if !eligible(&x.item_id) {
                stats.dropped_missing_attribute += 1;
            } else {
                kept.push(x.clone());
            }
        }
        if kept.len() < opts.min_interactions {
            stats.dropped_short_users += 1;
            continue;
        }
        sort_chronologically(&mut kept);
        users.insert(user.clone(), kept);
    }

    if let Some(max_users) = opts.max_users {
        if users.len() > max_users {
            let ids: Vec<String> = users.keys().cloned().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(opts.sample_seed);
            let chosen: BTreeSet<&String> = ids.choose_multiple(&mut rng, max_users).collect();
            stats.dropped_sampled_users = users.len() - max_users;
            users.retain(|id, _| chosen.contains(id));
        }
    }

    for seq in users.values_mut() {
        if seq.len() > opts.max_history {
            let excess = seq.len() - opts.max_history;
            stats.truncated_interactions += excess;
            seq.drain(..excess);
        }
    }

    if users.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "{} users in input, {} non-positive and {} missing-attribute interactions dropped, {} users below {} interactions",
            corpus.users.len(),
            stats.dropped_non_positive,
            stats.dropped_missing_attribute,
            stats.dropped_short_users,
            opts.min_interactions
        )));
    }

    let referenced: BTreeSet<&str> =
        users.values().flatten().map(|x| x.item_id.as_str()).collect();
    let items = corpus
        .items
        .iter()
        .filter(|(id, _)| referenced.contains(id.as_str()))
        .map(|(id, item)| (id.clone(), item.clone()))
        .collect();
    let splits = users.iter().map(|(u, seq)| (u.clone(), SplitMarks::for_len(seq.len()))).collect();

    Ok((Corpus { items, users, splits }, stats))
}
