//! File-backed pipeline stages. Each stage reads its upstream artifacts from
//! the output directory, refuses artifacts written under a different config
//! hash, writes its own artifacts and records their digests in
//! `manifest.json`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::control::ControlScheme;
use crate::corpus::{
    apply_tags, fit_corpus_bucketings, load_corpus, load_tags, preprocess, Bucketings, Corpus, Interaction, Item,
    PreprocessStats, SequenceWindow, Split, SplitMarks,
};
use crate::error::{Error, Result};
use crate::experiments::{
    evaluate_methods, generate_synth, rank_all, split_instances, table_row, threshold_sweep, token_count_sweep,
    ExperimentData, Method, SweepResult, TABLE_HEADER,
};
use crate::metrics::EvalReport;
use crate::ranker::{train, Checkpoint, FeatureContext, ScorerModel, TrainStats, FEATURE_DIM};
use crate::retrieval::{build_instances, fit_retriever, RankingInstance, TransitionModel};

pub const ARTIFACT_VERSION: u32 = 1;

pub const ITEMS_FILE: &str = "items.jsonl";
pub const INTERACTIONS_FILE: &str = "interactions.jsonl";
pub const WINDOWS_FILE: &str = "windows.jsonl";
pub const BUCKETING_FILE: &str = "bucketing.json";
pub const PREPARE_STATS_FILE: &str = "prepare_stats.json";
pub const RETRIEVER_FILE: &str = "retriever.json";
pub const INSTANCES_FILE: &str = "instances.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const EVAL_TABLE_FILE: &str = "eval_table.tsv";
pub const PAIR_ACCURACY_FILE: &str = "pair_accuracy.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Prepare,
    TrainRetriever,
    TrainRanker,
    Eval,
    SweepThreshold,
    SweepTokens,
    Synth,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::TrainRetriever => "train-retriever",
            Stage::TrainRanker => "train-ranker",
            Stage::Eval => "eval",
            Stage::SweepThreshold => "sweep threshold",
            Stage::SweepTokens => "sweep tokens",
            Stage::Synth => "synth",
        }
    }
}

/// Provenance carried by every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub artifact: String,
    pub version: u32,
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    #[serde(flatten)]
    header: ArtifactHeader,
    body: T,
}

pub fn report_file(method: Method) -> String {
    format!("report_{method}.json")
}

/// Paths and provenance for one run directory.
pub struct RunDir<'a> {
    pub root: &'a Path,
    pub config_hash: String,
    pub seed: u64,
}

impl<'a> RunDir<'a> {
    pub fn new(cfg: &'a RunConfig) -> Self {
        RunDir { root: &cfg.out_dir, config_hash: cfg.config_hash(), seed: cfg.seed }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn header(&self, artifact: &str, stage: Stage) -> ArtifactHeader {
        ArtifactHeader {
            artifact: artifact.to_owned(),
            version: ARTIFACT_VERSION,
            stage: stage.name().to_owned(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        }
    }

    fn check(&self, path: &Path, header: &ArtifactHeader, stage: Stage) -> Result<()> {
        if header.version != ARTIFACT_VERSION {
            return Err(Error::Version { what: path.display().to_string(), found: header.version, expected: ARTIFACT_VERSION });
        }
        if header.config_hash != self.config_hash {
            return Err(Error::HashMismatch {
                stage: stage.name().to_owned(),
                path: path.to_owned(),
                found: header.config_hash.clone(),
                expected: self.config_hash.clone(),
            });
        }
        Ok(())
    }

    fn require(&self, name: &str, stage: Stage) -> Result<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact { stage: stage.name().to_owned(), path: p })
        }
    }

    pub fn write_json<T: Serialize>(&self, name: &str, stage: Stage, body: &T) -> Result<PathBuf> {
        let path = self.path(name);
        let doc = Envelope { header: self.header(name, stage), body };
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::format(name, e))?;
        text.push('\n');
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, stage: Stage) -> Result<T> {
        let path = self.require(name, stage)?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let doc: Envelope<T> = serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e))?;
        self.check(&path, &doc.header, stage)?;
        Ok(doc.body)
    }

    /// Header line followed by one record per line.
    pub fn write_jsonl<'r, T: Serialize + 'r>(
        &self,
        name: &str,
        stage: Stage,
        records: impl IntoIterator<Item = &'r T>,
    ) -> Result<PathBuf> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let mut put = |v: String| writeln!(out, "{v}").map_err(|e| Error::io(&path, e));
        put(serde_json::to_string(&self.header(name, stage)).expect("header serializes"))?;
        for r in records {
            put(serde_json::to_string(r).map_err(|e| Error::format(name, e))?)?;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read_jsonl<T: DeserializeOwned>(&self, name: &str, stage: Stage) -> Result<Vec<T>> {
        let path = self.require(name, stage)?;
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = BufReader::new(file).lines();
        let bad = |lineno: usize, e: serde_json::Error| Error::format(format!("{}:{lineno}", path.display()), e);
        let first = lines
            .next()
            .ok_or_else(|| Error::format(path.display().to_string(), "empty artifact"))?
            .map_err(|e| Error::io(&path, e))?;
        let header: ArtifactHeader = serde_json::from_str(&first).map_err(|e| bad(1, e))?;
        self.check(&path, &header, stage)?;
        let mut out = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            out.push(serde_json::from_str(&line).map_err(|e| bad(i + 2, e))?);
        }
        Ok(out)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// File name relative to the run directory, to SHA-256 hex digest.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Records a stage's outputs. A manifest from another config is replaced.
pub fn record_stage(run: &RunDir<'_>, stage: Stage, files: &[PathBuf]) -> Result<Manifest> {
    let path = run.path(MANIFEST_FILE);
    let mut manifest = std::fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
        .filter(|m| m.config_hash == run.config_hash && m.version == ARTIFACT_VERSION)
        .unwrap_or_else(|| Manifest {
            version: ARTIFACT_VERSION,
            config_hash: run.config_hash.clone(),
            seed: run.seed,
            stages: BTreeMap::new(),
        });
    let mut record = StageRecord::default();
    for f in files {
        let name = f.strip_prefix(run.root).unwrap_or(f).to_string_lossy().into_owned();
        record.files.insert(name, file_digest(f)?);
    }
    manifest.stages.insert(stage.name().to_owned(), record);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_file(&path, text.as_bytes())?;
    Ok(manifest)
}

/// Loads (or generates) the raw corpus named by the config.
pub fn load_raw_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let mut corpus = match (&cfg.synth, &cfg.paths.items, &cfg.paths.interactions) {
        (Some(s), _, _) => generate_synth(s, cfg.retrieval.k)?,
        (None, Some(items), Some(interactions)) => {
            let (c, stats) = load_corpus(items, interactions)?;
            log::info!(
                "loaded {} items, {} interactions ({} item lines and {} interaction lines skipped)",
                stats.items,
                stats.interactions,
                stats.skipped_item_lines,
                stats.skipped_interaction_lines
            );
            c
        }
        _ => return Err(Error::Config("no data source configured".into())),
    };
    if let Some(tags) = &cfg.paths.tags {
        let n = apply_tags(&mut corpus, &load_tags(tags)?);
        log::info!("applied tags to {n} items");
    }
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub preprocess: PreprocessStats,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub windows: BTreeMap<Split, usize>,
    pub bucket_warnings: Vec<String>,
}

/// In-memory result of preprocessing.
pub struct Prepared {
    pub corpus: Corpus,
    pub bucketings: Bucketings,
    pub windows: Vec<SequenceWindow>,
    pub summary: PrepareSummary,
}

pub fn prepare_data(cfg: &RunConfig) -> Result<Prepared> {
    let raw = load_raw_corpus(cfg)?;
    let (corpus, stats) = preprocess(&raw, &cfg.required_attributes(), &cfg.preprocess_options())?;
    let (bucketings, bucket_warnings) = fit_corpus_bucketings(&corpus, cfg.n_buckets)?;
    let windows = corpus.windows(cfg.window);
    let mut per_split = BTreeMap::new();
    for w in &windows {
        *per_split.entry(w.split).or_insert(0) += 1;
    }
    let summary = PrepareSummary {
        preprocess: stats,
        users: corpus.users.len(),
        items: corpus.items.len(),
        interactions: corpus.n_interactions(),
        windows: per_split,
        bucket_warnings,
    };
    Ok(Prepared { corpus, bucketings, windows, summary })
}

pub fn run_prepare(cfg: &RunConfig) -> Result<PrepareSummary> {
    let run = RunDir::new(cfg);
    std::fs::create_dir_all(run.root).map_err(|e| Error::io(run.root, e))?;
    let p = prepare_data(cfg)?;
    let files = vec![
        run.write_jsonl(ITEMS_FILE, Stage::Prepare, p.corpus.items.values())?,
        run.write_jsonl(INTERACTIONS_FILE, Stage::Prepare, p.corpus.users.values().flatten())?,
        run.write_jsonl(WINDOWS_FILE, Stage::Prepare, &p.windows)?,
        run.write_json(BUCKETING_FILE, Stage::Prepare, &p.bucketings)?,
        run.write_json(PREPARE_STATS_FILE, Stage::Prepare, &p.summary)?,
    ];
    record_stage(&run, Stage::Prepare, &files)?;
    Ok(p.summary)
}

/// Prepared artifacts read back from a run directory.
pub struct LoadedPrepare {
    pub items: BTreeMap<String, Item>,
    pub bucketings: Bucketings,
    pub windows: Vec<SequenceWindow>,
}

pub fn load_prepared(run: &RunDir<'_>) -> Result<LoadedPrepare> {
    let items: Vec<Item> = run.read_jsonl(ITEMS_FILE, Stage::Prepare)?;
    Ok(LoadedPrepare {
        items: items.into_iter().map(|it| (it.item_id.clone(), it)).collect(),
        bucketings: run.read_json(BUCKETING_FILE, Stage::Prepare)?,
        windows: run.read_jsonl(WINDOWS_FILE, Stage::Prepare)?,
    })
}

/// Rebuilds the preprocessed corpus (items, users and splits).
pub fn load_prepared_corpus(run: &RunDir<'_>) -> Result<Corpus> {
    let items: Vec<Item> = run.read_jsonl(ITEMS_FILE, Stage::Prepare)?;
    let interactions: Vec<Interaction> = run.read_jsonl(INTERACTIONS_FILE, Stage::Prepare)?;
    let mut corpus = Corpus { items: items.into_iter().map(|it| (it.item_id.clone(), it)).collect(), ..Corpus::default() };
    for x in interactions {
        corpus.users.entry(x.user_id.clone()).or_default().push(x);
    }
    corpus.splits = corpus.users.iter().map(|(u, seq)| (u.clone(), SplitMarks::for_len(seq.len()))).collect();
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverSummary {
    pub catalogue: usize,
    pub instances: BTreeMap<Split, usize>,
    pub gt_present: BTreeMap<Split, usize>,
}

pub fn run_train_retriever(cfg: &RunConfig) -> Result<RetrieverSummary> {
    let run = RunDir::new(cfg);
    let prepared = load_prepared(&run)?;
    let retriever = fit_retriever(&prepared.windows, cfg.retrieval.alpha, cfg.retrieval.gamma)?;
    let opts = cfg.experiment_options().instance_options(&cfg.scheme);
    let instances = build_instances(&prepared.windows, &retriever, &prepared.items, &prepared.bucketings, &opts)?;
    let mut summary =
        RetrieverSummary { catalogue: retriever.catalogue().len(), instances: BTreeMap::new(), gt_present: BTreeMap::new() };
    for inst in &instances {
        *summary.instances.entry(inst.split).or_insert(0) += 1;
        *summary.gt_present.entry(inst.split).or_insert(0) += usize::from(inst.gt_index.is_some());
    }
    let files = vec![
        run.write_json(RETRIEVER_FILE, Stage::TrainRetriever, &retriever)?,
        run.write_jsonl(INSTANCES_FILE, Stage::TrainRetriever, &instances)?,
    ];
    record_stage(&run, Stage::TrainRetriever, &files)?;
    Ok(summary)
}

fn load_retriever(run: &RunDir<'_>) -> Result<TransitionModel> {
    run.read_json(RETRIEVER_FILE, Stage::TrainRetriever)
}

fn load_instances(run: &RunDir<'_>) -> Result<BTreeMap<Split, Vec<RankingInstance>>> {
    Ok(split_instances(run.read_jsonl(INSTANCES_FILE, Stage::TrainRetriever)?))
}

pub fn run_train_ranker(cfg: &RunConfig) -> Result<Checkpoint> {
    let run = RunDir::new(cfg);
    let prepared = load_prepared(&run)?;
    let retriever = load_retriever(&run)?;
    let by_split = load_instances(&run)?;
    let stats = TrainStats::from_retriever(&retriever);
    let ctx = FeatureContext { items: &prepared.items, bucketings: &prepared.bucketings, retriever: &retriever, stats };
    let model = ScorerModel::init(cfg.ranker.architecture, FEATURE_DIM, cfg.seed);
    let outcome = train(model, &by_split[&Split::Train], &by_split[&Split::Valid], &cfg.train, &ctx)?;
    if outcome.skipped > 0 {
        log::info!("{} training instances had an empty pair set", outcome.skipped);
    }
    let checkpoint = Checkpoint::new(&outcome, stats, &cfg.train, &run.config_hash);
    let files = vec![run.write_json(CHECKPOINT_FILE, Stage::TrainRanker, &checkpoint)?];
    record_stage(&run, Stage::TrainRanker, &files)?;
    Ok(checkpoint)
}

pub fn load_checkpoint(run: &RunDir<'_>) -> Result<Checkpoint> {
    let c: Checkpoint = run.read_json(CHECKPOINT_FILE, Stage::TrainRanker)?;
    Checkpoint::from_json(&c.to_json())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAccuracy {
    pub pair_accuracy: f64,
    pub n_instances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub reports: BTreeMap<Method, EvalReport>,
    pub pair_accuracy: f64,
}

/// Everything the evaluation stages need, loaded and hash-checked.
struct EvalInputs {
    prepared: LoadedPrepare,
    retriever: TransitionModel,
    checkpoint: Checkpoint,
    test: Vec<RankingInstance>,
}

impl EvalInputs {
    fn load(run: &RunDir<'_>) -> Result<Self> {
        let prepared = load_prepared(run)?;
        let retriever = load_retriever(run)?;
        let mut by_split = load_instances(run)?;
        let checkpoint = load_checkpoint(run)?;
        Ok(EvalInputs { prepared, retriever, checkpoint, test: by_split.remove(&Split::Test).unwrap_or_default() })
    }

    fn ctx(&self) -> FeatureContext<'_> {
        FeatureContext {
            items: &self.prepared.items,
            bucketings: &self.prepared.bucketings,
            retriever: &self.retriever,
            stats: self.checkpoint.train_stats,
        }
    }
}

fn write_report(path: &Path, report: &EvalReport) -> Result<PathBuf> {
    write_file(path, report.to_json().as_bytes())?;
    Ok(path.to_owned())
}

pub fn run_eval(cfg: &RunConfig) -> Result<EvalSummary> {
    let run = RunDir::new(cfg);
    let inputs = EvalInputs::load(&run)?;
    let opts = cfg.experiment_options();
    let eval = evaluate_methods(&inputs.checkpoint.model, &inputs.test, &inputs.ctx(), &opts.eval_settings(&cfg.scheme))?;

    let mut files = Vec::new();
    let mut table = format!("{TABLE_HEADER}\n");
    for method in Method::ALL {
        let report = &eval.reports[&method];
        files.push(write_report(&run.path(&report_file(method)), report)?);
        table.push_str(&table_row(method, report));
        table.push('\n');
    }
    write_file(&run.path(EVAL_TABLE_FILE), table.as_bytes())?;
    files.push(run.path(EVAL_TABLE_FILE));
    let acc = PairAccuracy { pair_accuracy: eval.pair_accuracy, n_instances: inputs.test.len() };
    files.push(run.write_json(PAIR_ACCURACY_FILE, Stage::Eval, &acc)?);
    record_stage(&run, Stage::Eval, &files)?;
    Ok(EvalSummary { reports: eval.reports, pair_accuracy: eval.pair_accuracy })
}

fn write_sweep(run: &RunDir<'_>, stage: Stage, dir: &str, sweep: &SweepResult, names: &[String]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for (point, name) in sweep.points.iter().zip(names) {
        files.push(write_report(&run.path(&format!("{dir}/{name}.json")), &point.report)?);
    }
    let table = run.path(&format!("{dir}/table.tsv"));
    write_file(&table, sweep.table().as_bytes())?;
    files.push(table);
    record_stage(run, stage, &files)?;
    Ok(files)
}

/// Writes one report per threshold `t = N_C .. 1` under `sweep_threshold/`.
pub fn run_sweep_threshold(cfg: &RunConfig, method: Method) -> Result<SweepResult> {
    let run = RunDir::new(cfg);
    let inputs = EvalInputs::load(&run)?;
    let rankings = rank_all(method, &inputs.checkpoint.model, &inputs.test, &inputs.ctx())?;
    let settings = cfg.experiment_options().eval_settings(&cfg.scheme);
    let sweep = threshold_sweep(&rankings, &cfg.scheme, method, &settings)?;
    let names: Vec<String> = sweep.points.iter().map(|p| format!("{method}_t{}", p.value)).collect();
    write_sweep(&run, Stage::SweepThreshold, "sweep_threshold", &sweep, &names)?;
    Ok(sweep)
}

/// Trains one ranker per configured scheme and writes one report each under
/// `sweep_tokens/`.
pub fn run_sweep_tokens(cfg: &RunConfig) -> Result<SweepResult> {
    let run = RunDir::new(cfg);
    let prepared = load_prepared(&run)?;
    let retriever = load_retriever(&run)?;
    let data = ExperimentData {
        items: &prepared.items,
        bucketings: &prepared.bucketings,
        windows: &prepared.windows,
        retriever: &retriever,
    };
    let (sweep, _) = token_count_sweep(&data, &cfg.sweep.token_schemes, &cfg.experiment_options())?;
    let names: Vec<String> = cfg.sweep.token_schemes.iter().map(|s: &ControlScheme| format!("learned_{}", s.label())).collect();
    write_sweep(&run, Stage::SweepTokens, "sweep_tokens", &sweep, &names)?;
    Ok(sweep)
}

/// Writes the raw synthetic corpus (before preprocessing) as plain JSONL so
/// it can be fed back through `paths.items` / `paths.interactions`.
pub fn run_synth(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let run = RunDir::new(cfg);
    let synth = cfg.synth.clone().unwrap_or_default();
    let corpus = generate_synth(&synth, cfg.retrieval.k)?;
    std::fs::create_dir_all(run.root).map_err(|e| Error::io(run.root, e))?;
    let items = run.path("synth_items.jsonl");
    let interactions = run.path("synth_interactions.jsonl");
    crate::corpus::write_corpus(&corpus, &items, &interactions)?;
    record_stage(&run, Stage::Synth, &[items.clone(), interactions.clone()])?;
    Ok((items, interactions))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> RunConfig {
        let text = format!(
            "out_dir = {:?}\n[preprocess]\nmin_interactions = 10\nmax_history = 20\n\
             [train]\nepochs = 1\n[synth]\nn_users = 30\nn_items = 150\nmin_history = 12\nmax_history = 18\n",
            dir.to_str().unwrap()
        );
        RunConfig::from_toml(&text, &[]).unwrap()
    }

    #[test]
    fn stages_chain_and_enforce_order() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        assert!(matches!(run_train_retriever(&cfg), Err(Error::MissingArtifact { .. })));
        run_prepare(&cfg).unwrap();
        run_train_retriever(&cfg).unwrap();
        match run_eval(&cfg) {
            Err(Error::MissingArtifact { stage, path }) => {
                assert_eq!(stage, "train-ranker");
                assert!(path.ends_with(CHECKPOINT_FILE));
            }
            other => panic!("expected missing checkpoint, got {other:?}"),
        }
        run_train_ranker(&cfg).unwrap();
        let summary = run_eval(&cfg).unwrap();
        assert_eq!(summary.reports.len(), 3);
        for m in Method::ALL {
            assert!(dir.path().join(report_file(m)).is_file());
        }
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest.stages.len(), 4);
        assert!(manifest.stages["eval"].files.contains_key("report_learned.json"));
    }

    #[test]
    fn mismatched_hash_refused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        run_prepare(&cfg).unwrap();
        let mut other = cfg.clone();
        other.retrieval.alpha = 0.2;
        assert!(matches!(run_train_retriever(&other), Err(Error::HashMismatch { .. })));
    }
}
