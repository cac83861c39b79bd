//! Run configuration loaded from TOML. Every field has a default, so an
//! empty file is a valid config for the synthetic corpus.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{ControlAttribute, ControlScheme};
use crate::corpus::{PreprocessOptions, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::experiments::{ExperimentOptions, SynthConfig};
use crate::metrics::Gain;
use crate::ranker::{Architecture, TrainConfig};
use crate::retrieval::{GtPolicy, TokenPolicy};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub items: Option<PathBuf>,
    pub interactions: Option<PathBuf>,
    pub tags: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub min_interactions: usize,
    pub max_history: usize,
    pub max_users: Option<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        let d = PreprocessOptions::default();
        PreprocessConfig { min_interactions: d.min_interactions, max_history: d.max_history, max_users: d.max_users }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub train_gt_policy: GtPolicy,
    pub eval_gt_policy: GtPolicy,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 6,
            alpha: 0.1,
            gamma: 0.8,
            train_gt_policy: GtPolicy::AsRetrieved,
            eval_gt_policy: GtPolicy::InjectGt,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerConfig {
    pub architecture: Architecture,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub gain: Gain,
    /// Defaults to the scheme size.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub token_schemes: Vec<ControlScheme>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        use ControlAttribute::*;
        let s = |v: Vec<ControlAttribute>| ControlScheme::new(v).expect("valid scheme");
        SweepConfig { token_schemes: vec![s(vec![Price]), s(vec![Price, Rank]), s(vec![Price, Rank, Brand])] }
    }
}

/// `seed` drives user subsampling, token sampling, initialization, shuffling
/// and the synthetic generator; `train.seed` and `synth.seed` are replaced
/// by it on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Not part of the config hash.
    pub out_dir: PathBuf,
    pub scheme: ControlScheme,
    pub n_buckets: usize,
    pub window: usize,
    pub paths: PathsConfig,
    pub preprocess: PreprocessConfig,
    pub retrieval: RetrievalConfig,
    /// Uniform for real data; anchored at the synthetic violation rate when
    /// a `[synth]` section is present.
    pub tokens: Option<TokenPolicy>,
    pub ranker: RankerConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub synth: Option<SynthConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out_dir: PathBuf::from("runs/default"),
            scheme: ControlScheme::new(vec![ControlAttribute::Price, ControlAttribute::Rank]).expect("valid scheme"),
            n_buckets: 5,
            window: DEFAULT_WINDOW,
            paths: PathsConfig::default(),
            preprocess: PreprocessConfig::default(),
            retrieval: RetrievalConfig::default(),
            tokens: None,
            ranker: RankerConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            synth: None,
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty override key `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_owned()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_owned(), parse_override_value(raw));
    Ok(())
}

impl RunConfig {
    /// Parses TOML, applies `key.path=value` overrides (values are TOML
    /// literals, bare words become strings) and validates.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let mut cfg: RunConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    /// Propagates the top-level seed.
    pub fn normalize(&mut self) {
        self.train.seed = self.seed;
        if let Some(s) = &mut self.synth {
            s.seed = self.seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let r = &self.retrieval;
        if !(1..=26).contains(&r.k) {
            return fail(format!("retrieval.k must be in 1..=26, got {}", r.k));
        }
        if r.alpha.is_nan() || r.alpha < 0.0 || !(r.gamma > 0.0 && r.gamma <= 1.0) {
            return fail(format!("need alpha >= 0 and 0 < gamma <= 1, got {} and {}", r.alpha, r.gamma));
        }
        if self.n_buckets == 0 {
            return fail("n_buckets must be positive".into());
        }
        if self.window < 2 {
            return fail(format!("window must be at least 2, got {}", self.window));
        }
        if let Some(t) = self.eval.threshold {
            if t.is_nan() || t < 0.0 {
                return fail(format!("eval.threshold must be non-negative, got {t}"));
            }
        }
        if let Some(TokenPolicy::GtAnchored { violation_rate }) = self.tokens {
            if !(0.0..=1.0).contains(&violation_rate) {
                return fail(format!("violation_rate must lie in [0, 1], got {violation_rate}"));
            }
        }
        if let Some(h) = match self.ranker.architecture {
            Architecture::Mlp { hidden } => Some(hidden),
            Architecture::Linear => None,
        } {
            if h == 0 {
                return fail("mlp hidden size must be positive".into());
            }
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        match (&self.synth, &self.paths.items, &self.paths.interactions) {
            (Some(s), _, _) => s.validate(r.k).map_err(|e| Error::Config(e.to_string()))?,
            (None, Some(_), Some(_)) => {}
            _ => return fail("set paths.items and paths.interactions, or add a [synth] section".into()),
        }
        let p = &self.preprocess;
        if p.min_interactions == 0 || p.max_history < p.min_interactions {
            return fail(format!(
                "need 1 <= preprocess.min_interactions ({}) <= preprocess.max_history ({})",
                p.min_interactions, p.max_history
            ));
        }
        Ok(())
    }

    pub fn token_policy(&self) -> TokenPolicy {
        match (self.tokens, &self.synth) {
            (Some(t), _) => t,
            (None, Some(s)) => TokenPolicy::GtAnchored { violation_rate: s.gt_violation_rate },
            (None, None) => TokenPolicy::Uniform,
        }
    }

    pub fn preprocess_options(&self) -> PreprocessOptions {
        PreprocessOptions {
            min_interactions: self.preprocess.min_interactions,
            max_history: self.preprocess.max_history,
            max_users: self.preprocess.max_users,
            sample_seed: self.seed,
        }
    }

    /// Attributes every retained item must carry: the union of the main
    /// scheme and the sweep schemes.
    pub fn required_attributes(&self) -> Vec<ControlAttribute> {
        ControlAttribute::ALL
            .into_iter()
            .filter(|a| self.scheme.contains(*a) || self.sweep.token_schemes.iter().any(|s| s.contains(*a)))
            .collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form, with
    /// `out_dir` cleared.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(digest)[..16].to_owned()
    }

    pub fn experiment_options(&self) -> ExperimentOptions {
        ExperimentOptions {
            k: self.retrieval.k,
            train_policy: self.retrieval.train_gt_policy,
            eval_policy: self.retrieval.eval_gt_policy,
            token_policy: self.token_policy(),
            architecture: self.ranker.architecture,
            train: self.train.clone(),
            gain: self.eval.gain,
            threshold: self.eval.threshold,
            seed: self.seed,
            config_hash: self.config_hash(),
        }
    }
}
