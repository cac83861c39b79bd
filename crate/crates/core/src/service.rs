//! Request handling behind the HTTP service, independent of any web
//! framework. All state is immutable after loading.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::control::{tokens_from_map, ControlAttribute, ControlScheme};
use crate::corpus::{Bucketings, Corpus, Item, Split};
use crate::error::Error;
use crate::experiments::{rank_with, Method};
use crate::metrics::{control_depth, control_precision, RankedList};
use crate::pipeline::{load_checkpoint, load_prepared_corpus, RunDir, BUCKETING_FILE, RETRIEVER_FILE, Stage};
use crate::ranker::{FeatureContext, ScorerModel, TrainStats};
use crate::retrieval::{RankingInstance, TransitionModel};

pub const MAX_SEARCH_RESULTS: usize = 50;
pub const MAX_HISTORY: usize = 5;
const DEFAULT_CUTOFF: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::NotFound(_) => 404,
            ServiceError::BadRequest(_) => 400,
            ServiceError::Internal(_) => 500,
        }
    }
}

impl From<Error> for ServiceError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownItem(_) => ServiceError::NotFound(e.to_string()),
            Error::UnknownBucketLabel { .. }
            | Error::InvalidScheme(_)
            | Error::InvalidArgument(_)
            | Error::TooManyCandidates(_)
            | Error::CatalogueTooSmall { .. }
            | Error::MissingBucketing(_) => ServiceError::BadRequest(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub item_id: String,
    pub title: String,
    pub price: Option<f64>,
    pub rank: Option<u64>,
    pub brand: Option<String>,
    pub categories: Vec<String>,
}

impl From<&Item> for ItemSummary {
    fn from(it: &Item) -> Self {
        ItemSummary {
            item_id: it.item_id.clone(),
            title: it.title.clone(),
            price: it.price,
            rank: it.sales_rank,
            brand: it.brand.clone(),
            categories: it.categories.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaResponse {
    pub attributes: Vec<ControlAttribute>,
    pub buckets: BTreeMap<ControlAttribute, Vec<String>>,
    pub brands: Vec<String>,
    pub categories: Vec<String>,
    pub methods: Vec<Method>,
    pub default_scheme: ControlScheme,
    pub default_k: usize,
    pub max_history: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryResponse {
    pub user_id: String,
    pub items: Vec<ItemSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankRequest {
    /// 1 to 5 item ids, oldest first.
    pub history: Vec<String>,
    /// Token order; defaults to the token attributes in canonical order.
    #[serde(default)]
    pub scheme: Option<Vec<ControlAttribute>>,
    #[serde(default)]
    pub tokens: BTreeMap<ControlAttribute, String>,
    pub method: Method,
    /// Number of candidates to retrieve.
    #[serde(default)]
    pub k: Option<usize>,
    /// Cutoff for `cp_at_k`; 3 unless set.
    #[serde(default)]
    pub cp_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankEntry {
    pub rank: usize,
    pub item_id: String,
    pub title: String,
    pub score: f64,
    pub r: u32,
    pub satisfied: Vec<bool>,
    pub retrieval_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResponse {
    pub method: Method,
    pub scheme: ControlScheme,
    pub tokens: Vec<String>,
    pub entries: Vec<RerankEntry>,
    pub threshold: f64,
    pub cp_k: usize,
    pub cp_at_k: f64,
    pub cd: usize,
    /// Hard filter only: number of entries matching every token.
    pub boundary: Option<usize>,
}

pub struct ServiceState {
    pub corpus: Corpus,
    pub bucketings: Bucketings,
    pub retriever: TransitionModel,
    pub model: ScorerModel,
    pub stats: TrainStats,
    pub default_scheme: ControlScheme,
    pub default_k: usize,
    brands: Vec<String>,
    categories: Vec<String>,
}

impl ServiceState {
    pub fn new(
        corpus: Corpus,
        bucketings: Bucketings,
        retriever: TransitionModel,
        model: ScorerModel,
        stats: TrainStats,
        default_scheme: ControlScheme,
        default_k: usize,
    ) -> Self {
        let brands: BTreeSet<String> = corpus.items.values().filter_map(|it| it.brand.clone()).collect();
        let categories: BTreeSet<String> = corpus.items.values().flat_map(|it| it.categories.iter().cloned()).collect();
        ServiceState {
            corpus,
            bucketings,
            retriever,
            model,
            stats,
            default_scheme,
            default_k,
            brands: brands.into_iter().collect(),
            categories: categories.into_iter().collect(),
        }
    }

    /// Loads the prepared corpus, retriever and checkpoint from the run
    /// directory, all checked against the config hash.
    pub fn load(cfg: &RunConfig) -> crate::error::Result<Self> {
        let run = RunDir::new(cfg);
        let corpus = load_prepared_corpus(&run)?;
        let bucketings = run.read_json(BUCKETING_FILE, Stage::Prepare)?;
        let retriever = run.read_json(RETRIEVER_FILE, Stage::TrainRetriever)?;
        let checkpoint = load_checkpoint(&run)?;
        Ok(Self::new(
            corpus,
            bucketings,
            retriever,
            checkpoint.model,
            checkpoint.train_stats,
            cfg.scheme.clone(),
            cfg.retrieval.k,
        ))
    }

    pub fn schema(&self) -> SchemaResponse {
        SchemaResponse {
            attributes: ControlAttribute::ALL.to_vec(),
            buckets: self.bucketings.0.iter().map(|(a, b)| (*a, b.labels.clone())).collect(),
            brands: self.brands.clone(),
            categories: self.categories.clone(),
            methods: Method::ALL.to_vec(),
            default_scheme: self.default_scheme.clone(),
            default_k: self.default_k,
            max_history: MAX_HISTORY,
        }
    }

    /// Case-insensitive title prefix search in item id order.
    pub fn search_items(&self, query: &str) -> Vec<ItemSummary> {
        let q = query.trim().to_lowercase();
        self.corpus
            .items
            .values()
            .filter(|it| it.title.to_lowercase().starts_with(&q))
            .take(MAX_SEARCH_RESULTS)
            .map(ItemSummary::from)
            .collect()
    }

    pub fn user_history(&self, user_id: &str) -> Result<HistoryResponse, ServiceError> {
        let seq = self
            .corpus
            .users
            .get(user_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown user `{user_id}`")))?;
        let items = seq
            .iter()
            .filter_map(|x| self.corpus.items.get(&x.item_id))
            .map(ItemSummary::from)
            .collect();
        Ok(HistoryResponse { user_id: user_id.to_owned(), items })
    }

    pub fn rerank(&self, req: &RerankRequest) -> Result<RerankResponse, ServiceError> {
        if req.history.is_empty() || req.history.len() > MAX_HISTORY {
            return Err(ServiceError::BadRequest(format!(
                "history must hold 1 to {MAX_HISTORY} item ids, got {}",
                req.history.len()
            )));
        }
        if let Some(id) = req.history.iter().find(|id| !self.corpus.items.contains_key(*id)) {
            return Err(ServiceError::NotFound(format!("unknown item id `{id}`")));
        }
        let k = req.k.unwrap_or(self.default_k);
        if k > 26 {
            return Err(ServiceError::BadRequest(format!("k = {k} exceeds 26 candidates")));
        }
        let scheme = match &req.scheme {
            Some(attrs) => ControlScheme::new(attrs.clone())?,
            None => ControlScheme::new(req.tokens.keys().copied().collect())?,
        };
        let tokens = tokens_from_map(&scheme, &req.tokens, &self.bucketings)?;
        let (candidates, retrieval_scores) = self.retriever.retrieve_candidates(&req.history, k)?;
        let cp_k = req.cp_k.unwrap_or(DEFAULT_CUTOFF).min(candidates.len());
        if cp_k == 0 {
            return Err(ServiceError::BadRequest("cp_k must be positive".into()));
        }

        let instance = RankingInstance {
            user_id: String::new(),
            history: req.history.clone(),
            target: String::new(),
            candidates,
            retrieval_scores,
            tokens,
            gt_index: None,
            split: Split::Test,
        };
        let ctx = FeatureContext {
            items: &self.corpus.items,
            bucketings: &self.bucketings,
            retriever: &self.retriever,
            stats: self.stats,
        };
        let ranking = rank_with(req.method, &self.model, &instance, &ctx)?;
        let threshold = scheme.len() as f64;
        let list: RankedList = ranking.list();
        let entries = ranking
            .order
            .iter()
            .enumerate()
            .map(|(pos, &i)| RerankEntry {
                rank: pos + 1,
                item_id: instance.candidates[i].clone(),
                title: self.corpus.items[&instance.candidates[i]].title.clone(),
                score: ranking.scores[i],
                r: ranking.r[i],
                satisfied: ranking.satisfied[i].clone(),
                retrieval_score: instance.retrieval_scores[i],
            })
            .collect();
        Ok(RerankResponse {
            method: req.method,
            tokens: instance.tokens.iter().map(ToString::to_string).collect(),
            scheme,
            entries,
            threshold,
            cp_k,
            cp_at_k: control_precision(&list, cp_k, threshold)?,
            cd: control_depth(&list, threshold),
            boundary: ranking.boundary,
        })
    }
}
