//! Quantile bucketing for numeric attributes (price, sales rank).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, Item};
use crate::control::ControlAttribute;
use crate::error::{Error, Result};

const BUCKETING_VERSION: u32 = 1;

/// Half-open intervals `[edge_{j-1}, edge_j)`; the outer buckets are
/// unbounded so every non-negative value lands somewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeBucketing {
    pub attribute: ControlAttribute,
    pub edges: Vec<f64>,
    pub labels: Vec<String>,
}

impl AttributeBucketing {
    pub fn n_buckets(&self) -> usize {
        self.labels.len()
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }
}

/// Fits `n_buckets` quantile buckets. Edge `i` is the smallest training
/// value whose empirical CDF reaches `i / n_buckets`. Edges that coincide
/// with each other or with the minimum are collapsed, and the second
/// return value then carries a warning naming the reduced bucket count.
pub fn fit_buckets(
    attribute: ControlAttribute,
    train_values: &[f64],
    n_buckets: usize,
) -> Result<(AttributeBucketing, Option<String>)> {
    if n_buckets < 2 {
        return Err(Error::InvalidArgument(format!("n_buckets must be >= 2, got {n_buckets}")));
    }
    if train_values.is_empty() {
        return Err(Error::InvalidArgument(format!("no training values for {attribute}")));
    }
    if let Some(&bad) = train_values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidAttributeValue { attribute, value: bad });
    }
    let mut sorted = train_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (min, max) = (sorted[0], sorted[n - 1]);

    let mut edges: Vec<f64> = Vec::with_capacity(n_buckets - 1);
    for i in 1..n_buckets {
        let edge = sorted[(i * n).div_ceil(n_buckets) - 1];
        if edge > min && edges.last().is_none_or(|&last| edge > last) {
            edges.push(edge);
        }
    }

    let mut bounds = Vec::with_capacity(edges.len() + 2);
    bounds.push(min);
    bounds.extend_from_slice(&edges);
    bounds.push(max);
    let labels = bounds.windows(2).map(|w| format!("{}-{}", w[0], w[1])).collect::<Vec<_>>();

    let warning = (labels.len() < n_buckets).then(|| {
        format!(
            "{attribute}: only {} distinct quantile buckets available (requested {n_buckets})",
            labels.len()
        )
    });
    Ok((AttributeBucketing { attribute, edges, labels }, warning))
}

/// Label of the bucket containing `value`. A value equal to an interior
/// edge belongs to the higher bucket; out-of-range values clamp.
pub fn assign_bucket(bucketing: &AttributeBucketing, value: f64) -> Result<&str> {
    if value.is_nan() || value < 0.0 {
        return Err(Error::InvalidAttributeValue { attribute: bucketing.attribute, value });
    }
    let idx = bucketing.edges.partition_point(|&e| e <= value);
    Ok(&bucketing.labels[idx])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bucketings(pub BTreeMap<ControlAttribute, AttributeBucketing>);

#[derive(Serialize, Deserialize)]
struct BucketingDoc {
    version: u32,
    bucketings: Vec<AttributeBucketing>,
}

impl Bucketings {
    pub fn get(&self, attribute: ControlAttribute) -> Result<&AttributeBucketing> {
        self.0.get(&attribute).ok_or(Error::MissingBucketing(attribute))
    }

    /// Bucket label of the item's value for a bucketed attribute, `None`
    /// when the item lacks the value.
    pub fn label_of(&self, item: &Item, attribute: ControlAttribute) -> Result<Option<&str>> {
        match item.numeric(attribute) {
            Some(v) => assign_bucket(self.get(attribute)?, v).map(Some),
            None => Ok(None),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = BucketingDoc { version: BUCKETING_VERSION, bucketings: self.0.values().cloned().collect() };
        serde_json::to_string_pretty(&doc).expect("bucketing serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BucketingDoc = serde_json::from_str(text).map_err(|e| Error::format("bucketing", e))?;
        if doc.version != BUCKETING_VERSION {
            return Err(Error::Version { what: "bucketing".into(), found: doc.version, expected: BUCKETING_VERSION });
        }
        let mut map = BTreeMap::new();
        for b in doc.bucketings {
            let ok = b.labels.len() == b.edges.len() + 1 && b.edges.windows(2).all(|w| w[0] < w[1]);
            if !ok {
                return Err(Error::format("bucketing", format!("inconsistent edges/labels for {}", b.attribute)));
            }
            map.insert(b.attribute, b);
        }
        Ok(Bucketings(map))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Fits buckets for every bucketed attribute from the distinct items seen
/// in training-split interactions. Attributes without any training value
/// are skipped.
pub fn fit_corpus_bucketings(corpus: &Corpus, n_buckets: usize) -> Result<(Bucketings, Vec<String>)> {
    let train_items: BTreeSet<&str> = corpus.train_interactions().map(|x| x.item_id.as_str()).collect();
    let mut out = Bucketings::default();
    let mut warnings = Vec::new();
    for attribute in [ControlAttribute::Price, ControlAttribute::Rank] {
        let values: Vec<f64> = train_items
            .iter()
            .filter_map(|id| corpus.items.get(*id))
            .filter_map(|item| item.numeric(attribute))
            .collect();
        if values.is_empty() {
            continue;
        }
        let (b, warning) = fit_buckets(attribute, &values, n_buckets)?;
        if let Some(w) = warning {
            log::warn!("{w}");
            warnings.push(w);
        }
        out.0.insert(attribute, b);
    }
    Ok((out, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Type-1 empirical quantile by brute force: scan sorted values for the
    /// first whose rank fraction reaches q.
    fn brute_quantile(values: &[f64], q: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        for (i, &x) in v.iter().enumerate() {
            if (i + 1) as f64 / n >= q - 1e-12 {
                return x;
            }
        }
        unreachable!()
    }

    #[test]
    fn one_to_hundred_five_buckets() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let (b, warn) = fit_buckets(ControlAttribute::Price, &values, 5).unwrap();
        let oracle: Vec<f64> = (1..5).map(|i| brute_quantile(&values, i as f64 / 5.0)).collect();
        assert_eq!(oracle, [20.0, 40.0, 60.0, 80.0]);
        assert_eq!(b.edges, oracle);
        assert_eq!(b.labels.len(), 5);
        assert_eq!(b.labels[0], "1-20");
        assert_eq!(b.labels[4], "80-100");
        assert!(warn.is_none());
    }

    #[test]
    fn identical_values_single_bucket() {
        let (b, warn) = fit_buckets(ControlAttribute::Price, &[5.0; 10], 5).unwrap();
        assert!(b.edges.is_empty());
        assert_eq!(b.labels, ["5-5"]);
        assert!(warn.is_some());
    }

    #[test]
    fn median_edge_for_two_buckets() {
        let values = [2.0, 6.0, 9.0, 14.0, 30.0];
        let (b, _) = fit_buckets(ControlAttribute::Price, &values, 2).unwrap();
        assert_eq!(b.edges, [brute_quantile(&values, 0.5)]);
        assert_eq!(b.edges, [9.0]);
    }

    #[test]
    fn assignment_rules() {
        let b = AttributeBucketing {
            attribute: ControlAttribute::Price,
            edges: vec![10.0, 25.0],
            labels: vec!["0-10".into(), "10-25".into(), "25-80".into()],
        };
        assert_eq!(assign_bucket(&b, 6.0).unwrap(), "0-10");
        assert_eq!(assign_bucket(&b, 10.0).unwrap(), "10-25");
        assert_eq!(assign_bucket(&b, 1e9).unwrap(), "25-80");
        assert_eq!(assign_bucket(&b, 0.0).unwrap(), "0-10");
        assert!(assign_bucket(&b, -1.0).is_err());
        assert!(assign_bucket(&b, f64::NAN).is_err());
    }

    #[test]
    fn persisted_bit_exact() {
        let values: Vec<f64> = (0..97).map(|i| (i as f64).sqrt() * 3.3 + 0.1).collect();
        let (b, _) = fit_buckets(ControlAttribute::Rank, &values, 5).unwrap();
        let mut all = Bucketings::default();
        all.0.insert(ControlAttribute::Rank, b);
        let back = Bucketings::from_json(&all.to_json()).unwrap();
        let bits = |x: &Bucketings| x.0[&ControlAttribute::Rank].edges.iter().map(|e| e.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&all), bits(&back));
        assert_eq!(all, back);
    }

    proptest! {
        #[test]
        fn edges_strictly_increasing(values in prop::collection::vec(0.0f64..1000.0, 1..200), n in 2usize..8) {
            let (b, _) = fit_buckets(ControlAttribute::Price, &values, n).unwrap();
            prop_assert!(b.edges.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(b.labels.len(), b.edges.len() + 1);
            prop_assert!(b.labels.len() <= n);
            let unique: BTreeSet<&String> = b.labels.iter().collect();
            prop_assert_eq!(unique.len(), b.labels.len());
        }

        #[test]
        fn assignment_matches_interval_membership(
            values in prop::collection::vec(0.0f64..100.0, 5..60),
            probe in 0.0f64..150.0,
        ) {
            let (b, _) = fit_buckets(ControlAttribute::Price, &values, 5).unwrap();
            let label = assign_bucket(&b, probe).unwrap();
            let idx = b.labels.iter().position(|l| l == label).unwrap();
            let lo = if idx == 0 { f64::NEG_INFINITY } else { b.edges[idx - 1] };
            let hi = b.edges.get(idx).copied().unwrap_or(f64::INFINITY);
            prop_assert!(lo <= probe && probe < hi);
        }
    }
}
