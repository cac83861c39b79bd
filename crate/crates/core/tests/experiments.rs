use std::collections::BTreeMap;
use std::sync::OnceLock;

use steerrank_core::control::{control_scores, ControlAttribute, ControlScheme};
use steerrank_core::corpus::{Bucketings, Item, SequenceWindow};
use steerrank_core::experiments::{
    hard_filter_rank, run_scheme, token_count_sweep, zero_shot_rank, ExperimentData, Method, SchemeRun,
};
use steerrank_core::metrics::control_precision;
use steerrank_core::pipeline::prepare_data;
use steerrank_core::ranker::{rerank, Architecture, ScorerModel, FEATURE_DIM};
use steerrank_core::retrieval::{build_instances, fit_retriever, TransitionModel};
use steerrank_core::RunConfig;

const SMALL: &str = r#"
seed = 7
scheme = ["price", "rank", "brand"]

[train]
epochs = 2

[synth]
n_users = 200
n_items = 800
"#;

struct Fixture {
    cfg: RunConfig,
    items: BTreeMap<String, Item>,
    bucketings: Bucketings,
    windows: Vec<SequenceWindow>,
    retriever: TransitionModel,
}

impl Fixture {
    fn new(cfg: RunConfig) -> Self {
        let p = prepare_data(&cfg).unwrap();
        let retriever = fit_retriever(&p.windows, cfg.retrieval.alpha, cfg.retrieval.gamma).unwrap();
        Fixture { cfg, items: p.corpus.items, bucketings: p.bucketings, windows: p.windows, retriever }
    }

    fn data(&self) -> ExperimentData<'_> {
        ExperimentData { items: &self.items, bucketings: &self.bucketings, windows: &self.windows, retriever: &self.retriever }
    }
}

fn small() -> &'static (Fixture, SchemeRun) {
    static CELL: OnceLock<(Fixture, SchemeRun)> = OnceLock::new();
    CELL.get_or_init(|| {
        let fx = Fixture::new(RunConfig::from_toml(SMALL, &[]).unwrap());
        let run = run_scheme(&fx.data(), &fx.cfg.scheme, &fx.cfg.experiment_options()).unwrap();
        (fx, run)
    })
}

#[test]
fn zero_shot_equals_untrained_reranker() {
    let (fx, run) = small();
    let ctx = fx.data().feature_context();
    let zero = ScorerModel::zeros(Architecture::Linear, FEATURE_DIM);
    for inst in &run.test_instances {
        let zs = zero_shot_rank(inst, &ctx).unwrap();
        let untrained: Vec<usize> = rerank(&zero, inst, &ctx).unwrap().iter().map(|e| e.candidate_index).collect();
        assert_eq!(zs.order, untrained);
    }
}

#[test]
fn hard_filter_never_loses_control_precision_to_zero_shot() {
    let (fx, run) = small();
    let t = fx.cfg.scheme.len() as f64;
    let zs = &run.evaluation.rankings[&Method::ZeroShot];
    let hf = &run.evaluation.rankings[&Method::HardFilter];
    for (a, b) in zs.iter().zip(hf) {
        assert!(control_precision(&b.list(), 3, t).unwrap() >= control_precision(&a.list(), 3, t).unwrap());
    }
    let reports = &run.evaluation.reports;
    assert!(reports[&Method::HardFilter].cp_at_3 >= reports[&Method::ZeroShot].cp_at_3);
}

#[test]
fn hard_filter_keeps_exactly_the_compliant_candidates() {
    let (fx, run) = small();
    let ctx = fx.data().feature_context();
    for inst in &run.test_instances {
        let hf = hard_filter_rank(inst, &ctx).unwrap();
        let compliant: Vec<bool> = hf.satisfied.iter().map(|row| row.iter().all(|&s| s)).collect();
        let boundary = hf.boundary.unwrap();
        assert_eq!(boundary, compliant.iter().filter(|&&c| c).count());
        assert!(hf.order[..boundary].iter().all(|&i| compliant[i]));
        assert!(hf.order[boundary..].iter().all(|&i| !compliant[i]));
        for group in [&hf.order[..boundary], &hf.order[boundary..]] {
            assert!(group.windows(2).all(|w| inst.retrieval_scores[w[0]] >= inst.retrieval_scores[w[1]]));
        }
    }
}

#[test]
fn anchored_tokens_violate_at_the_configured_rate() {
    let cfg = RunConfig::from_toml("scheme = [\"price\", \"rank\", \"brand\"]\n[synth]\ngt_violation_rate = 0.3\n", &[]).unwrap();
    let fx = Fixture::new(cfg);
    let opts = fx.cfg.experiment_options().instance_options(&fx.cfg.scheme);
    let instances = build_instances(&fx.windows, &fx.retriever, &fx.items, &fx.bucketings, &opts).unwrap();
    let (mut anchored, mut violated) = (0usize, 0usize);
    for inst in &instances {
        let Some(g) = inst.gt_index else { continue };
        let resolved = inst.resolve(&fx.items).unwrap();
        let (sat, _) = control_scores(&resolved, &inst.tokens, Some(g), &fx.bucketings).unwrap();
        anchored += 1;
        violated += usize::from(sat.matched[g] < inst.tokens.len());
        assert!(sat.matched[g] + 1 >= inst.tokens.len(), "at most one violated token");
    }
    let rate = violated as f64 / anchored as f64;
    assert!(anchored >= 2000, "{anchored} anchored instances");
    assert!((rate - 0.3).abs() <= 0.03, "violation rate {rate}");
}

#[test]
fn more_tokens_lower_control_precision() {
    let (fx, _) = small();
    let schemes: Vec<ControlScheme> = [
        vec![ControlAttribute::Price],
        vec![ControlAttribute::Price, ControlAttribute::Rank],
        vec![ControlAttribute::Price, ControlAttribute::Rank, ControlAttribute::Brand],
    ]
    .into_iter()
    .map(|a| ControlScheme::new(a).unwrap())
    .collect();
    let (sweep, runs) = token_count_sweep(&fx.data(), &schemes, &fx.cfg.experiment_options()).unwrap();
    assert_eq!(runs.len(), 3);
    let values: Vec<f64> = sweep.points.iter().map(|p| p.value).collect();
    assert_eq!(values, [1.0, 2.0, 3.0]);
    for w in sweep.points.windows(2) {
        assert!(w[1].report.cp_at_3 <= w[0].report.cp_at_3, "{}", sweep.table());
    }
    for p in &sweep.points {
        assert!((0.0..=1.0).contains(&p.report.ndcg_at_5));
        assert_eq!(p.report.threshold, p.value);
    }
}
