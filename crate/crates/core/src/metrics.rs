//! Graded NDCG, binary hit rate, control precision (CP@K) and control
//! depth (CD), plus per-run aggregation.
//!
//! All list positions are 1-based in this module, matching how the metrics
//! are usually written down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relevance grades in ranked order (index 0 is the top) and the 1-based
/// position of the ground truth, if it is in the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub relevance: Vec<f64>,
    pub gt_position: Option<usize>,
}

impl RankedList {
    /// Builds the list from a candidate order (best first), per-candidate
    /// control scores and the ground-truth candidate index.
    pub fn from_order(order: &[usize], r: &[u32], gt_index: Option<usize>) -> Self {
        RankedList {
            relevance: order.iter().map(|&i| f64::from(r[i])).collect(),
            gt_position: gt_index.and_then(|g| order.iter().position(|&i| i == g)).map(|p| p + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.relevance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevance.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// `2^rel - 1`
    #[default]
    Exponential,
    /// `rel`
    Linear,
}

impl Gain {
    fn apply(self, rel: f64) -> f64 {
        match self {
            Gain::Exponential => rel.exp2() - 1.0,
            Gain::Linear => rel,
        }
    }
}

fn dcg(rel: &[f64], k: usize, gain: Gain) -> f64 {
    rel.iter().take(k).enumerate().map(|(p, &r)| gain.apply(r) / ((p + 2) as f64).log2()).sum()
}

/// NDCG@k with the ideal ordering taken from the same list. Zero when the
/// ideal DCG is zero.
pub fn ndcg_at_k(list: &RankedList, k: usize, gain: Gain) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if let Some(&r) = list.relevance.iter().find(|r| r.is_nan() || **r < 0.0) {
        return Err(Error::InvalidArgument(format!("negative or NaN relevance {r}")));
    }
    let mut ideal = list.relevance.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal, k, gain);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg(&list.relevance, k, gain) / idcg)
}

pub fn hit_rate_at_k(list: &RankedList, k: usize) -> f64 {
    match list.gt_position {
        Some(p) if p <= k => 1.0,
        _ => 0.0,
    }
}

/// Fraction of the top `k` with relevance `>= t`.
pub fn control_precision(list: &RankedList, k: usize, t: f64) -> Result<f64> {
    if k == 0 || k > list.len() {
        return Err(Error::InvalidArgument(format!("CP@{k} undefined for a list of length {}", list.len())));
    }
    Ok(list.relevance[..k].iter().filter(|&&r| r >= t).count() as f64 / k as f64)
}

/// 1-based rank of the first item with relevance `>= t`, or `L + 1`.
pub fn control_depth(list: &RankedList, t: f64) -> usize {
    list.relevance.iter().position(|&r| r >= t).map_or(list.len() + 1, |p| p + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub ndcg_at_2: f64,
    pub ndcg_at_5: f64,
    pub hr_at_3: f64,
    pub cp_at_3: f64,
    pub cd: f64,
}

pub fn instance_metrics(list: &RankedList, threshold: f64, gain: Gain) -> Result<InstanceMetrics> {
    Ok(InstanceMetrics {
        ndcg_at_2: ndcg_at_k(list, 2, gain)?,
        ndcg_at_5: ndcg_at_k(list, 5, gain)?,
        hr_at_3: hit_rate_at_k(list, 3),
        cp_at_3: control_precision(list, 3, threshold)?,
        cd: control_depth(list, threshold) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub scheme: String,
    /// Usually the number of control attributes.
    pub threshold: f64,
    pub gain: Gain,
    pub seed: u64,
    pub config_hash: String,
}

/// Means over instances (per window). Serialized with exactly the keys
/// below, in this order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: String,
    pub n_instances: usize,
    pub gt_present_rate: f64,
    pub ndcg_at_2: f64,
    pub ndcg_at_5: f64,
    pub hr_at_3: f64,
    pub cp_at_3: f64,
    pub cd: f64,
    pub threshold: f64,
    pub seed: u64,
    pub config_hash: String,
    /// Instances whose candidates all share one control score.
    #[serde(skip)]
    pub skipped_empty_pairs: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn evaluate_run(lists: &[RankedList], settings: &EvalSettings) -> Result<EvalReport> {
    if lists.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty instance set".into()));
    }
    let per = lists
        .iter()
        .map(|l| instance_metrics(l, settings.threshold, settings.gain))
        .collect::<Result<Vec<_>>>()?;
    let n = lists.len() as f64;
    let mean = |f: fn(&InstanceMetrics) -> f64| per.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        scheme: settings.scheme.clone(),
        n_instances: lists.len(),
        gt_present_rate: lists.iter().filter(|l| l.gt_position.is_some()).count() as f64 / n,
        ndcg_at_2: mean(|m| m.ndcg_at_2),
        ndcg_at_5: mean(|m| m.ndcg_at_5),
        hr_at_3: mean(|m| m.hr_at_3),
        cp_at_3: mean(|m| m.cp_at_3),
        cd: mean(|m| m.cd),
        threshold: settings.threshold,
        seed: settings.seed,
        config_hash: settings.config_hash.clone(),
        skipped_empty_pairs: lists.iter().filter(|l| l.relevance.windows(2).all(|w| w[0] == w[1])).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(rel: &[f64], gt: Option<usize>) -> RankedList {
        RankedList { relevance: rel.to_vec(), gt_position: gt }
    }

    #[test]
    fn ideal_order_is_one() {
        let l = list(&[3.0, 2.0, 2.0, 1.0, 0.0], None);
        for k in 1..=6 {
            assert!((ndcg_at_k(&l, k, Gain::Exponential).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_ndcg() {
        // DCG@2 = 0 + 3/log2(3); IDCG@2 = 3/log2(2) = 3.
        let v = ndcg_at_k(&list(&[0.0, 2.0, 0.0], None), 2, Gain::Exponential).unwrap();
        let hand = (3.0 / 3f64.log2()) / 3.0;
        assert!((v - hand).abs() < 1e-15);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&list(&[0.0; 4], None), 3, Gain::Exponential).unwrap(), 0.0);
        assert!(ndcg_at_k(&list(&[-1.0], None), 1, Gain::Linear).is_err());
    }

    #[test]
    fn hit_rate_cases() {
        assert_eq!(hit_rate_at_k(&list(&[0.0; 6], Some(2)), 3), 1.0);
        assert_eq!(hit_rate_at_k(&list(&[0.0; 6], None), 3), 0.0);
        assert_eq!(hit_rate_at_k(&list(&[0.0; 6], Some(4)), 3), 0.0);
        assert_eq!(hit_rate_at_k(&list(&[0.0; 6], Some(3)), 3), 1.0);
    }

    #[test]
    fn control_precision_cases() {
        let l = list(&[2.0, 1.0, 2.0, 0.0, 2.0, 1.0], None);
        assert!((control_precision(&l, 3, 2.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(control_precision(&list(&[3.0, 3.0, 2.0], None), 3, 2.0).unwrap(), 1.0);
        assert_eq!(control_precision(&list(&[1.0, 0.0, 1.0, 2.0], None), 3, 2.0).unwrap(), 0.0);
        assert!(control_precision(&l, 7, 1.0).is_err());
    }

    #[test]
    fn control_depth_cases() {
        assert_eq!(control_depth(&list(&[2.0, 1.0, 2.0, 0.0], None), 2.0), 1);
        assert_eq!(control_depth(&list(&[1.0; 6], None), 2.0), 7);
        assert_eq!(control_depth(&list(&[0.0; 6], None), 0.0), 1);
    }

    #[test]
    fn aggregation() {
        let settings = EvalSettings {
            scheme: "price".into(),
            threshold: 1.0,
            gain: Gain::Exponential,
            seed: 1,
            config_hash: "x".into(),
        };
        let single = list(&[1.0, 0.0, 2.0, 0.0, 0.0, 0.0], Some(3));
        let r = evaluate_run(std::slice::from_ref(&single), &settings).unwrap();
        let m = instance_metrics(&single, 1.0, Gain::Exponential).unwrap();
        assert_eq!((r.ndcg_at_2, r.ndcg_at_5, r.hr_at_3, r.cp_at_3, r.cd), (m.ndcg_at_2, m.ndcg_at_5, m.hr_at_3, m.cp_at_3, m.cd));

        let full = list(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0], None);
        let none = list(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], None);
        let r = evaluate_run(&[full, none], &settings).unwrap();
        assert_eq!(r.cp_at_3, 0.5);
        assert_eq!(r.gt_present_rate, 0.0);
        assert!(evaluate_run(&[], &settings).is_err());
    }

    #[test]
    fn report_keys_exact() {
        let settings = EvalSettings { scheme: "price".into(), threshold: 1.0, gain: Gain::Linear, seed: 3, config_hash: "h".into() };
        let r = evaluate_run(&[list(&[1.0, 0.0, 0.0], Some(1))], &settings).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        let mut expected = vec![
            "scheme", "n_instances", "gt_present_rate", "ndcg_at_2", "ndcg_at_5", "hr_at_3", "cp_at_3", "cd",
            "threshold", "seed", "config_hash",
        ];
        expected.sort();
        let mut got: Vec<&str> = keys.iter().map(|s| s.as_str()).collect();
        got.sort();
        assert_eq!(got, expected);
    }

    fn rel_list() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0u32..5).prop_map(f64::from), 1..9)
    }

    proptest! {
        #[test]
        fn threshold_monotonicity(rel in rel_list(), t in 0u32..5, dt in 0u32..5) {
            let l = list(&rel, None);
            let (hi, lo) = (f64::from(t + dt), f64::from(t));
            let k = l.len().min(3);
            prop_assert!(control_precision(&l, k, lo).unwrap() >= control_precision(&l, k, hi).unwrap());
            prop_assert!(control_depth(&l, lo) <= control_depth(&l, hi));
        }

        #[test]
        fn depth_sentinel_iff_no_precision(rel in rel_list(), t in 0u32..5) {
            let l = list(&rel, None);
            let t = f64::from(t);
            prop_assert_eq!(control_depth(&l, t) == l.len() + 1, control_precision(&l, l.len(), t).unwrap() == 0.0);
        }

        #[test]
        fn ndcg_bounds_and_tail_permutation(rel in rel_list(), k in 1usize..6, swap in any::<prop::sample::Index>()) {
            let l = list(&rel, None);
            let v = ndcg_at_k(&l, k, Gain::Exponential).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            // Reordering below the cutoff leaves NDCG@k unchanged.
            if l.len() > k + 1 {
                let mut tail = l.clone();
                let j = k + swap.index(l.len() - k);
                tail.relevance.swap(k, j);
                prop_assert_eq!(ndcg_at_k(&tail, k, Gain::Exponential).unwrap(), v);
            }
        }

        #[test]
        fn hit_rate_ignores_relevance(rel in rel_list(), gt in prop::option::of(1usize..9)) {
            let l = list(&rel, gt);
            let zeros = list(&vec![0.0; rel.len()], gt);
            prop_assert_eq!(hit_rate_at_k(&l, 3), hit_rate_at_k(&zeros, 3));
        }
    }
}
