//! Command-line front end for the staged pipeline and the HTTP service.

pub mod server;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use steerrank_core::experiments::Method;
use steerrank_core::pipeline;
use steerrank_core::{Error, RunConfig};

/// Exit status for invalid configuration or usage.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status when an upstream stage has not been run for this config.
pub const EXIT_MISSING_STAGE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "steerrank", version, about = "Controllable sequential re-ranking pipeline")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Overrides any config field, e.g. `--set train.epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_key_value)]
    pub overrides: Vec<(String, String)>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, preprocess, fit buckets and cut windows.
    Prepare,
    /// Fit the transition retriever and build ranking instances.
    TrainRetriever,
    /// Train the re-ranker.
    TrainRanker,
    /// Evaluate learned, hard-filter and zero-shot rankings on the test split.
    Eval,
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Write a raw synthetic corpus as JSONL.
    Synth,
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum SweepCommand {
    /// Re-evaluate one method at every threshold from N_C down to 1.
    Threshold {
        #[arg(long, default_value = "learned")]
        method: String,
    },
    /// Train and evaluate one ranker per configured token scheme.
    Tokens,
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    Ok((k.trim().to_owned(), v.trim().to_owned()))
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_CONFIG,
            Error::MissingArtifact { .. } | Error::HashMismatch { .. } => EXIT_MISSING_STAGE,
            _ => 1,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError { code: 1, message: format!("{e:#}") }
    }
}

pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path, &overrides)?,
        None => RunConfig::from_toml("", &overrides)?,
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError { code: EXIT_CONFIG, message: format!("cannot set {n} threads: {e}") })?;
    }
    log::info!("config hash {}", cfg.config_hash());
    match &cli.command {
        Command::Prepare => print_json(&pipeline::run_prepare(&cfg)?),
        Command::TrainRetriever => print_json(&pipeline::run_train_retriever(&cfg)?),
        Command::TrainRanker => {
            let c = pipeline::run_train_ranker(&cfg)?;
            println!("best epoch {}", c.best_epoch);
            print_json(&c.history);
        }
        Command::Eval => {
            let summary = pipeline::run_eval(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.out_dir.join(pipeline::EVAL_TABLE_FILE)).unwrap_or_default());
            println!("pair_accuracy\t{:.4}", summary.pair_accuracy);
        }
        Command::Sweep(SweepCommand::Threshold { method }) => {
            let method: Method = method.parse().map_err(|e: Error| CliError { code: EXIT_CONFIG, message: e.to_string() })?;
            print!("{}", pipeline::run_sweep_threshold(&cfg, method)?.table());
        }
        Command::Sweep(SweepCommand::Tokens) => print!("{}", pipeline::run_sweep_tokens(&cfg)?.table()),
        Command::Synth => {
            let (items, interactions) = pipeline::run_synth(&cfg)?;
            println!("{}\n{}", items.display(), interactions.display());
        }
        Command::Serve { addr } => server::serve(&cfg, addr)?,
    }
    Ok(())
}
