//! `gas`: ingest comments, generate synthetic corpora, build the comment
//! graph, train and apply models, and evaluate scores.
//!
//! Failures print a single `error kind=<tag> msg=<json string>` line on
//! stderr and exit nonzero (2 for usage errors, 1 otherwise).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gas_core::model::{Precision, Variant};
use gas_core::GasError;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "gas", version, about = "Graph-based comment spam detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a records file and write a normalised copy with a summary.
    Ingest(Opts),
    /// Generate a seeded synthetic corpus with word vectors and features.
    Synth(Opts),
    /// Build the comment KNN graph from records and word vectors.
    BuildKnn(Opts),
    /// Train a model; writes the checkpoint, history and test metrics.
    Train(Opts),
    /// Score every comment with a trained checkpoint.
    Predict(Opts),
    /// Compute metrics and the PR curve from a scores file.
    Eval(Opts),
    /// Embedding smoothing diagnostic and neighbor spam statistics.
    Diagnose(Opts),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Opts {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=2))]
    layers: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    precision: Option<Precision>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    user_features: Option<PathBuf>,
    #[arg(long)]
    item_features: Option<PathBuf>,
    #[arg(long)]
    comment_graph: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
}

impl Opts {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let sets = self
            .set
            .iter()
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))
            })
            .collect::<Result<Vec<_>>>()?;
        cfg.apply(&sets)?;
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(v) = self.variant {
            cfg.model.variant = v;
        }
        if let Some(l) = self.layers {
            cfg.model.layers = l as usize;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(p) = self.precision {
            cfg.model.precision = p;
        }
        let p = &mut cfg.paths;
        for (slot, flag) in [
            (&mut p.records, &self.records),
            (&mut p.embeddings, &self.embeddings),
            (&mut p.user_features, &self.user_features),
            (&mut p.item_features, &self.item_features),
            (&mut p.comment_graph, &self.comment_graph),
            (&mut p.checkpoint, &self.checkpoint),
            (&mut p.scores, &self.scores),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        Ok(cfg)
    }
}

/// Parses `GAS_THREADS`. Every stage currently runs on one thread, so the
/// value only has to be a valid cap.
fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("GAS_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| GasError::Config(format!("GAS_THREADS must be a positive integer, got `{v}`")))?;
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = thread_cap()? {
        log::debug!("thread cap {n}; running single-threaded");
    }
    match cli.command {
        Command::Ingest(o) => commands::ingest(&o.resolve()?, o.out.as_deref()),
        Command::Synth(o) => commands::synth(&o.resolve()?, o.out.as_deref()),
        Command::BuildKnn(o) => commands::build_knn(&o.resolve()?, o.out.as_deref()),
        Command::Train(o) => commands::train(&o.resolve()?, o.out.as_deref()),
        Command::Predict(o) => commands::predict(&o.resolve()?, o.out.as_deref()),
        Command::Eval(o) => commands::eval(&o.resolve()?, o.out.as_deref()),
        Command::Diagnose(o) => commands::diagnose(&o.resolve()?, o.out.as_deref()),
    }
}

fn fail(kind: &str, msg: &str, code: u8) -> ExitCode {
    let one_line = msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ");
    eprintln!("error kind={kind} msg={}", serde_json::Value::from(one_line));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            return fail("usage", first, 2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<GasError>().map(GasError::kind))
                .or_else(|| e.chain().find_map(|c| c.downcast_ref::<std::io::Error>().map(|_| "io")))
                .unwrap_or("other");
            fail(kind, &format!("{e:#}"), 1)
        }
    }
}
