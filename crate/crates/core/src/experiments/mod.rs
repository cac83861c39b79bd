//! Baselines, threshold and token-count sweeps, and a synthetic corpus
//! generator.

mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlScheme;
use crate::corpus::{Bucketings, Item, SequenceWindow, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_run, EvalReport, EvalSettings, Gain, RankedList};
use crate::ranker::{
    build_pairs_from, featurize, pair_accuracy, rank_order, train, Architecture, FeatureContext, ScorerModel,
    TrainConfig, TrainOutcome, TrainStats, FEATURE_DIM,
};
use crate::retrieval::{build_instances, GtPolicy, InstanceOptions, RankingInstance, TokenPolicy, TransitionModel};

pub use synth::{generate_synth, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Learned,
    HardFilter,
    ZeroShot,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Learned, Method::HardFilter, Method::ZeroShot];

    pub fn name(self) -> &'static str {
        match self {
            Method::Learned => "learned",
            Method::HardFilter => "hard_filter",
            Method::ZeroShot => "zero_shot",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// One instance ranked by one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRanking {
    /// Candidate indices, best first.
    pub order: Vec<usize>,
    /// Per candidate, in retrieval order. Model scores for the learned
    /// method, retrieval scores otherwise.
    pub scores: Vec<f64>,
    pub r: Vec<u32>,
    pub satisfied: Vec<Vec<bool>>,
    pub gt_index: Option<usize>,
    /// Number of fully compliant candidates placed ahead of the rest (hard
    /// filter only).
    pub boundary: Option<usize>,
}

impl InstanceRanking {
    pub fn list(&self) -> RankedList {
        RankedList::from_order(&self.order, &self.r, self.gt_index)
    }
}

/// Retrieval score descending, then original position.
pub fn zero_shot_order(retrieval: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..retrieval.len()).collect();
    order.sort_by(|&a, &b| retrieval[b].total_cmp(&retrieval[a]).then(a.cmp(&b)));
    order
}

/// Candidates matching all `n_c` tokens first, then the excluded ones, each
/// group in retrieval order. Returns the order and the group boundary.
pub fn hard_filter_order(matched: &[usize], n_c: usize, retrieval: &[f64]) -> (Vec<usize>, usize) {
    let (kept, excluded): (Vec<usize>, Vec<usize>) =
        zero_shot_order(retrieval).into_iter().partition(|&i| matched[i] == n_c);
    let boundary = kept.len();
    (kept.into_iter().chain(excluded).collect(), boundary)
}

fn ranking_parts(
    instance: &RankingInstance,
    ctx: &FeatureContext<'_>,
) -> Result<(crate::ranker::Featurized, Vec<u32>)> {
    let f = featurize(instance, ctx)?;
    let r = f.scores.scores.clone();
    Ok((f, r))
}

pub fn zero_shot_rank(instance: &RankingInstance, ctx: &FeatureContext<'_>) -> Result<InstanceRanking> {
    let (f, r) = ranking_parts(instance, ctx)?;
    Ok(InstanceRanking {
        order: zero_shot_order(&instance.retrieval_scores),
        scores: instance.retrieval_scores.clone(),
        r,
        satisfied: f.satisfaction.entries,
        gt_index: instance.gt_index,
        boundary: None,
    })
}

pub fn hard_filter_rank(instance: &RankingInstance, ctx: &FeatureContext<'_>) -> Result<InstanceRanking> {
    let (f, r) = ranking_parts(instance, ctx)?;
    let (order, boundary) = hard_filter_order(&f.satisfaction.matched, instance.tokens.len(), &instance.retrieval_scores);
    Ok(InstanceRanking {
        order,
        scores: instance.retrieval_scores.clone(),
        r,
        satisfied: f.satisfaction.entries,
        gt_index: instance.gt_index,
        boundary: Some(boundary),
    })
}

pub fn learned_rank(model: &ScorerModel, instance: &RankingInstance, ctx: &FeatureContext<'_>) -> Result<InstanceRanking> {
    let (f, r) = ranking_parts(instance, ctx)?;
    let scores = model.score(&f.features)?;
    Ok(InstanceRanking {
        order: rank_order(&scores, &instance.retrieval_scores),
        scores,
        r,
        satisfied: f.satisfaction.entries,
        gt_index: instance.gt_index,
        boundary: None,
    })
}

pub fn rank_with(
    method: Method,
    model: &ScorerModel,
    instance: &RankingInstance,
    ctx: &FeatureContext<'_>,
) -> Result<InstanceRanking> {
    match method {
        Method::Learned => learned_rank(model, instance, ctx),
        Method::HardFilter => hard_filter_rank(instance, ctx),
        Method::ZeroShot => zero_shot_rank(instance, ctx),
    }
}

/// Ranks every instance; output order follows input order.
pub fn rank_all(
    method: Method,
    model: &ScorerModel,
    instances: &[RankingInstance],
    ctx: &FeatureContext<'_>,
) -> Result<Vec<InstanceRanking>> {
    instances.par_iter().map(|inst| rank_with(method, model, inst, ctx)).collect()
}

/// Pooled fraction of control-score pairs ordered strictly correctly by
/// the rankings' scores.
pub fn run_pair_accuracy(rankings: &[InstanceRanking]) -> f64 {
    let (correct, total) = rankings
        .iter()
        .map(|x| pair_accuracy(&x.scores, &build_pairs_from(&x.r)))
        .fold((0, 0), |(c, t), (a, b)| (c + a, t + b));
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

pub fn evaluate_rankings(rankings: &[InstanceRanking], settings: &EvalSettings) -> Result<EvalReport> {
    let lists: Vec<RankedList> = rankings.iter().map(InstanceRanking::list).collect();
    evaluate_run(&lists, settings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Threshold,
    TokenCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Threshold `t` or number of control tokens.
    pub value: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub method: Method,
    pub points: Vec<SweepPoint>,
}

/// Tab-separated header shared by every results table.
pub const TABLE_HEADER: &str = "method\tscheme\tt\tN@2\tN@5\tH@3\tCP@3\tCD";

pub fn table_row(method: Method, report: &EvalReport) -> String {
    format!(
        "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
        method, report.scheme, report.threshold, report.ndcg_at_2, report.ndcg_at_5, report.hr_at_3, report.cp_at_3, report.cd
    )
}

impl SweepResult {
    pub fn table(&self) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for p in &self.points {
            out.push_str(&table_row(self.method, &p.report));
            out.push('\n');
        }
        out
    }
}

/// Re-evaluates fixed rankings at `t = N_C, N_C - 1, ..., 1`.
pub fn threshold_sweep(
    rankings: &[InstanceRanking],
    scheme: &ControlScheme,
    method: Method,
    base: &EvalSettings,
) -> Result<SweepResult> {
    if scheme.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "threshold sweep needs at least 2 control attributes, scheme `{}` has {}",
            scheme.label(),
            scheme.len()
        )));
    }
    let lists: Vec<RankedList> = rankings.iter().map(InstanceRanking::list).collect();
    let points = (1..=scheme.len())
        .rev()
        .map(|t| {
            let settings = EvalSettings { threshold: t as f64, ..base.clone() };
            Ok(SweepPoint { value: t as f64, report: evaluate_run(&lists, &settings)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { axis: SweepAxis::Threshold, method, points })
}

/// Read-only inputs shared by every scheme of an experiment.
#[derive(Clone, Copy)]
pub struct ExperimentData<'a> {
    pub items: &'a BTreeMap<String, Item>,
    pub bucketings: &'a Bucketings,
    pub windows: &'a [SequenceWindow],
    pub retriever: &'a TransitionModel,
}

impl<'a> ExperimentData<'a> {
    pub fn feature_context(&self) -> FeatureContext<'a> {
        FeatureContext {
            items: self.items,
            bucketings: self.bucketings,
            retriever: self.retriever,
            stats: TrainStats::from_retriever(self.retriever),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub k: usize,
    pub train_policy: GtPolicy,
    pub eval_policy: GtPolicy,
    pub token_policy: TokenPolicy,
    pub architecture: Architecture,
    pub train: TrainConfig,
    pub gain: Gain,
    /// Evaluation threshold; the scheme size when unset.
    pub threshold: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

impl ExperimentOptions {
    pub fn instance_options(&self, scheme: &ControlScheme) -> InstanceOptions {
        InstanceOptions {
            scheme: scheme.clone(),
            k: self.k,
            train_policy: self.train_policy,
            eval_policy: self.eval_policy,
            token_policy: self.token_policy,
            seed: self.seed,
        }
    }

    pub fn eval_settings(&self, scheme: &ControlScheme) -> EvalSettings {
        EvalSettings {
            scheme: scheme.label(),
            threshold: self.threshold.unwrap_or(scheme.len() as f64),
            gain: self.gain,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
        }
    }
}

pub fn split_instances(instances: Vec<RankingInstance>) -> BTreeMap<Split, Vec<RankingInstance>> {
    let mut out: BTreeMap<Split, Vec<RankingInstance>> =
        [Split::Train, Split::Valid, Split::Test].into_iter().map(|s| (s, Vec::new())).collect();
    for inst in instances {
        out.entry(inst.split).or_default().push(inst);
    }
    out
}

/// Rankings, reports and learned-ranker pair accuracy on one instance set.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodEvaluation {
    pub rankings: BTreeMap<Method, Vec<InstanceRanking>>,
    pub reports: BTreeMap<Method, EvalReport>,
    pub pair_accuracy: f64,
}

pub fn evaluate_methods(
    model: &ScorerModel,
    instances: &[RankingInstance],
    ctx: &FeatureContext<'_>,
    settings: &EvalSettings,
) -> Result<MethodEvaluation> {
    let mut rankings = BTreeMap::new();
    let mut reports = BTreeMap::new();
    for method in Method::ALL {
        let ranked = rank_all(method, model, instances, ctx)?;
        reports.insert(method, evaluate_rankings(&ranked, settings)?);
        rankings.insert(method, ranked);
    }
    let pair_accuracy = run_pair_accuracy(&rankings[&Method::Learned]);
    Ok(MethodEvaluation { rankings, reports, pair_accuracy })
}

#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub scheme: ControlScheme,
    pub outcome: TrainOutcome,
    pub evaluation: MethodEvaluation,
    pub test_instances: Vec<RankingInstance>,
}

/// Builds instances for `scheme`, trains a ranker on the training split
/// (validation split for checkpoint selection) and evaluates all methods on
/// the test split.
pub fn run_scheme(data: &ExperimentData<'_>, scheme: &ControlScheme, opts: &ExperimentOptions) -> Result<SchemeRun> {
    let instances = build_instances(data.windows, data.retriever, data.items, data.bucketings, &opts.instance_options(scheme))?;
    let mut by_split = split_instances(instances);
    let ctx = data.feature_context();
    let model = ScorerModel::init(opts.architecture, FEATURE_DIM, opts.seed);
    let outcome = train(model, &by_split[&Split::Train], &by_split[&Split::Valid], &opts.train, &ctx)?;
    let test_instances = by_split.remove(&Split::Test).unwrap_or_default();
    let evaluation = evaluate_methods(&outcome.model, &test_instances, &ctx, &opts.eval_settings(scheme))?;
    Ok(SchemeRun { scheme: scheme.clone(), outcome, evaluation, test_instances })
}

/// Trains and evaluates one ranker per scheme, each at its own `t = N_C`.
/// Non-nested scheme sequences are accepted with a warning.
pub fn token_count_sweep(
    data: &ExperimentData<'_>,
    schemes: &[ControlScheme],
    opts: &ExperimentOptions,
) -> Result<(SweepResult, Vec<SchemeRun>)> {
    if schemes.is_empty() {
        return Err(Error::InvalidArgument("token-count sweep needs at least one scheme".into()));
    }
    for pair in schemes.windows(2) {
        if !pair[0].is_subset_of(&pair[1]) || pair[0].len() >= pair[1].len() {
            log::warn!("schemes `{}` and `{}` are not strictly nested", pair[0].label(), pair[1].label());
        }
    }
    let opts = ExperimentOptions { threshold: None, ..opts.clone() };
    let runs = schemes.iter().map(|s| run_scheme(data, s, &opts)).collect::<Result<Vec<_>>>()?;
    let points = runs
        .iter()
        .map(|run| SweepPoint {
            value: run.scheme.len() as f64,
            report: run.evaluation.reports[&Method::Learned].clone(),
        })
        .collect();
    Ok((SweepResult { axis: SweepAxis::TokenCount, method: Method::Learned, points }, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hard_filter_partition() {
        let retrieval = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4];
        let (order, boundary) = hard_filter_order(&[0, 2, 1, 2, 0, 2], 2, &retrieval);
        assert_eq!(order, [1, 3, 5, 0, 2, 4]);
        assert_eq!(boundary, 3);
        let (order, boundary) = hard_filter_order(&[2; 6], 2, &retrieval);
        assert_eq!((order, boundary), (vec![0, 1, 2, 3, 4, 5], 6));
        let (order, boundary) = hard_filter_order(&[1; 6], 2, &retrieval);
        assert_eq!((order, boundary), (vec![0, 1, 2, 3, 4, 5], 0));
    }

    #[test]
    fn hard_filter_none_compliant_depth() {
        let (order, _) = hard_filter_order(&[1, 0, 1, 0, 1, 0], 2, &[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        let list = RankedList::from_order(&order, &[1, 0, 1, 0, 1, 0], None);
        assert_eq!(crate::metrics::control_depth(&list, 2.0), 7);
    }

    #[test]
    fn zero_shot_matches_zero_model_order() {
        let retrieval = [0.3, 0.9, 0.3, 0.1, 0.9, 0.5];
        assert_eq!(zero_shot_order(&retrieval), rank_order(&[0.0; 6], &retrieval));
        assert_eq!(zero_shot_order(&retrieval), [1, 4, 5, 0, 2, 3]);
    }

    fn fixture(r: &[u32]) -> InstanceRanking {
        InstanceRanking {
            order: (0..r.len()).collect(),
            scores: vec![0.0; r.len()],
            r: r.to_vec(),
            satisfied: vec![],
            gt_index: Some(2),
            boundary: None,
        }
    }

    fn settings() -> EvalSettings {
        EvalSettings { scheme: "price+rank".into(), threshold: 2.0, gain: Gain::Exponential, seed: 1, config_hash: "h".into() }
    }

    #[test]
    fn threshold_sweep_hand_fixture() {
        let scheme = ControlScheme::new(vec![crate::control::ControlAttribute::Price, crate::control::ControlAttribute::Rank]).unwrap();
        let sweep = threshold_sweep(&[fixture(&[1, 0, 3, 2, 1, 0])], &scheme, Method::Learned, &settings()).unwrap();
        let values: Vec<(f64, f64, f64)> = sweep.points.iter().map(|p| (p.value, p.report.cp_at_3, p.report.cd)).collect();
        assert_eq!(values, [(2.0, 1.0 / 3.0, 3.0), (1.0, 2.0 / 3.0, 1.0)]);
        assert!(sweep.table().lines().count() == 3);

        let single = ControlScheme::new(vec![crate::control::ControlAttribute::Price]).unwrap();
        assert!(threshold_sweep(&[fixture(&[1, 0, 1])], &single, Method::Learned, &settings()).is_err());
    }

    #[test]
    fn pair_accuracy_pooled() {
        let mut a = fixture(&[2, 1, 0]);
        a.scores = vec![3.0, 2.0, 1.0];
        let mut b = fixture(&[0, 1, 0]);
        b.scores = vec![1.0, 0.0, 0.0];
        // 3/3 correct plus 0/2.
        assert!((run_pair_accuracy(&[a, b]) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
    }
}
