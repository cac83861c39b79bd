use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Interaction, Item};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_brands: usize,
    pub n_categories: usize,
    /// Log-price is normal with these parameters.
    pub price_log_mean: f64,
    pub price_log_std: f64,
    pub min_history: usize,
    pub max_history: usize,
    /// Probability that the next item follows the previous item's
    /// successor list.
    pub markov_prob: f64,
    /// Probability that the next item comes from the user's home brand and
    /// price band.
    pub preference_strength: f64,
    /// Probability of an extra low-rated interaction at each step.
    pub noise_rate: f64,
    /// Fraction of ground-truth anchored instances whose target violates
    /// one sampled token.
    pub gt_violation_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 500,
            n_items: 2000,
            n_brands: 20,
            n_categories: 12,
            price_log_mean: 3.0,
            price_log_std: 1.0,
            min_history: 30,
            max_history: 50,
            markov_prob: 0.4,
            preference_strength: 0.4,
            noise_rate: 0.05,
            gt_violation_rate: 0.3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        let rate = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_items < k.max(1) {
            return Err(Error::InvalidArgument(format!("n_items = {} is below K = {k}", self.n_items)));
        }
        if self.n_users == 0 || self.n_brands == 0 || self.n_categories == 0 {
            return Err(Error::InvalidArgument("synthetic sizes must be positive".into()));
        }
        if self.min_history < 2 || self.max_history < self.min_history || self.max_history > self.n_items {
            return Err(Error::InvalidArgument(format!(
                "need 2 <= min_history ({}) <= max_history ({}) <= n_items",
                self.min_history, self.max_history
            )));
        }
        if !(rate(self.markov_prob)
            && rate(self.preference_strength)
            && rate(self.markov_prob + self.preference_strength)
            && rate(self.noise_rate)
            && rate(self.gt_violation_rate))
        {
            return Err(Error::InvalidArgument("synthetic rates must lie in [0, 1]".into()));
        }
        if !(self.price_log_std > 0.0 && self.price_log_mean.is_finite()) {
            return Err(Error::InvalidArgument("price distribution parameters are invalid".into()));
        }
        Ok(())
    }
}

const SUCCESSORS: usize = 3;
const NOUNS: [&str; 8] = ["kit", "set", "pack", "case", "model", "edition", "bundle", "toy"];

struct Catalogue {
    items: Vec<Item>,
    log_price: Vec<f64>,
    popularity: WeightedIndex<f64>,
    successors: Vec<Vec<usize>>,
    by_brand: Vec<Vec<usize>>,
}

fn catalogue(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Catalogue> {
    let price = LogNormal::new(config.price_log_mean, config.price_log_std)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let weight = LogNormal::new(0.0, 1.0).expect("valid lognormal");
    let n = config.n_items;

    let weights: Vec<f64> = (0..n).map(|_| weight.sample(rng)).collect();
    let mut by_weight: Vec<usize> = (0..n).collect();
    by_weight.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut sales_rank = vec![0u64; n];
    for (pos, &i) in by_weight.iter().enumerate() {
        sales_rank[i] = pos as u64 * 25 + rng.random_range(1..=25);
    }

    let mut items = Vec::with_capacity(n);
    let mut log_price = Vec::with_capacity(n);
    let mut by_brand = vec![Vec::new(); config.n_brands];
    for (i, &rank) in sales_rank.iter().enumerate() {
        let brand = rng.random_range(0..config.n_brands);
        let p = (price.sample(rng) * 100.0).round().max(1.0) / 100.0;
        let primary = brand % config.n_categories;
        let mut categories = vec![format!("category-{primary:02}")];
        if rng.random::<f64>() < 0.3 {
            let extra = rng.random_range(0..config.n_categories);
            if extra != primary {
                categories.push(format!("category-{extra:02}"));
            }
        }
        let noun = NOUNS[rng.random_range(0..NOUNS.len())];
        items.push(Item {
            item_id: format!("i{i:05}"),
            title: format!("Brand{brand:02} {noun} {i}"),
            price: Some(p),
            sales_rank: Some(rank),
            brand: Some(format!("Brand{brand:02}")),
            categories,
        });
        log_price.push(p.ln());
        by_brand[brand].push(i);
    }

    let mut successors = Vec::with_capacity(n);
    for (i, item) in items.iter().enumerate() {
        let brand: usize = item.brand.as_deref().and_then(|b| b[5..].parse().ok()).expect("generated brand");
        let pool: Vec<usize> = by_brand[brand].iter().copied().filter(|&j| j != i).collect();
        let mut next = Vec::with_capacity(SUCCESSORS);
        if !pool.is_empty() {
            let w = WeightedIndex::new(pool.iter().map(|&j| weights[j])).expect("positive weights");
            for _ in 0..SUCCESSORS {
                next.push(pool[w.sample(rng)]);
            }
        }
        successors.push(next);
    }

    let popularity = WeightedIndex::new(&weights).expect("positive weights");
    Ok(Catalogue { items, log_price, popularity, successors, by_brand })
}

/// Generates a corpus whose users each prefer a home brand and price band.
/// Sequences mix successor transitions, preferred items and popularity
/// draws, so the next item is predictable from the history and tends to
/// share the history's attributes. Identical configs give identical
/// corpora.
pub fn generate_synth(config: &SynthConfig, k: usize) -> Result<Corpus> {
    config.validate(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cat = catalogue(config, &mut rng)?;
    let center = Normal::new(config.price_log_mean, config.price_log_std * 0.5).expect("valid normal");

    let mut users = BTreeMap::new();
    for u in 0..config.n_users {
        let user_id = format!("u{u:04}");
        let home = rng.random_range(0..config.n_brands);
        let c = center.sample(&mut rng);
        let mut preferred: Vec<usize> =
            cat.by_brand[home].iter().copied().filter(|&i| (cat.log_price[i] - c).abs() <= 0.75).collect();
        if preferred.len() < 5 {
            preferred = cat.by_brand[home].clone();
        }
        let len = rng.random_range(config.min_history..=config.max_history);

        let mut seen = BTreeSet::new();
        let mut seq = Vec::with_capacity(len + len / 10);
        let mut ts = 1_500_000_000 + rng.random_range(0..10_000_000i64);
        let mut prev: Option<usize> = None;
        while seen.len() < len {
            let mut pick = None;
            for _ in 0..20 {
                let roll = rng.random::<f64>();
                let candidate = match prev {
                    Some(p) if roll < config.markov_prob && !cat.successors[p].is_empty() => {
                        cat.successors[p][rng.random_range(0..cat.successors[p].len())]
                    }
                    _ if roll < config.markov_prob + config.preference_strength && !preferred.is_empty() => {
                        preferred[rng.random_range(0..preferred.len())]
                    }
                    _ => cat.popularity.sample(&mut rng),
                };
                if !seen.contains(&candidate) {
                    pick = Some(candidate);
                    break;
                }
            }
            let next = match pick {
                Some(i) => i,
                None => loop {
                    let i = cat.popularity.sample(&mut rng);
                    if !seen.contains(&i) {
                        break i;
                    }
                },
            };
            ts += rng.random_range(3_600..86_400);
            if rng.random::<f64>() < config.noise_rate {
                let noise = cat.popularity.sample(&mut rng);
                seq.push(Interaction {
                    user_id: user_id.clone(),
                    item_id: cat.items[noise].item_id.clone(),
                    rating: rng.random_range(1..=3),
                    timestamp: ts,
                });
                ts += rng.random_range(60..3_600);
            }
            seq.push(Interaction {
                user_id: user_id.clone(),
                item_id: cat.items[next].item_id.clone(),
                rating: rng.random_range(4..=5),
                timestamp: ts,
            });
            seen.insert(next);
            prev = Some(next);
        }
        users.insert(user_id, seq);
    }

    let items = cat.items.into_iter().map(|it| (it.item_id.clone(), it)).collect();
    Ok(Corpus { items, users, splits: BTreeMap::new() })
}
