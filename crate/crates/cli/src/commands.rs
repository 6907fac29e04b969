//! Subcommand bodies. Every output is a pure function of the inputs and
//! the seed; nothing time-dependent is written.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use gas_core::eval::{metrics_report, pr_curve, smoothing_diagnostic, write_pr_csv, ScoredSet};
use gas_core::graph::{
    ingest as read_records_file, load_node_features, neighbor_spam_stats, write_records, AlignedCommentGraph,
    BipartiteGraph, CommentGraph, CommentRecord, Label, NodeFeatures,
};
use gas_core::knn::{build_comment_graph, record_embeddings};
use gas_core::model::{
    load_checkpoint, predict_batch, save_checkpoint, train as train_model, Dataset, Model, Variant,
};
use gas_core::synth::{synth_corpus, write_corpus};
use gas_core::text::{load_embeddings, word_table_for};
use gas_core::GasError;
use serde::Serialize;

use crate::config::RunConfig;

fn out_dir(out: Option<&Path>) -> Result<PathBuf> {
    let dir = out.ok_or_else(|| GasError::Config("missing --out DIR".into()))?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

fn need<'a>(p: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| GasError::Config(format!("missing {what} (--{flag} or paths.{})", flag.replace('-', "_"))).into())
}

fn seed(cfg: &RunConfig, cmd: &str) -> Result<u64> {
    cfg.seed
        .ok_or_else(|| GasError::Config(format!("`{cmd}` requires --seed")).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_records(cfg: &RunConfig) -> Result<Vec<CommentRecord>> {
    let path = need(&cfg.paths.records, "records file", "records")?;
    read_records_file(path).with_context(|| format!("reading {}", path.display()))
}

fn load_graph(cfg: &RunConfig, records: Vec<CommentRecord>) -> Result<BipartiteGraph> {
    let mut graph = BipartiteGraph::build(records)?;
    let mut feats = NodeFeatures::default();
    let mut any = false;
    for p in [&cfg.paths.user_features, &cfg.paths.item_features].into_iter().flatten() {
        load_node_features(p, &mut feats).with_context(|| format!("reading {}", p.display()))?;
        any = true;
    }
    if any {
        graph.attach_features(&feats)?;
    }
    Ok(graph)
}

fn load_comment_graph(cfg: &RunConfig, required: bool) -> Result<Option<CommentGraph>> {
    match &cfg.paths.comment_graph {
        Some(p) => Ok(Some(CommentGraph::load(p).with_context(|| format!("reading {}", p.display()))?)),
        None if required => bail!(GasError::Config(
            "variant gas needs a comment graph (--comment-graph or paths.comment_graph)".into()
        )),
        None => Ok(None),
    }
}

fn write_scores(path: &Path, rows: &[(&str, f64, Label)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("writing {}", path.display()))?);
    writeln!(w, "comment_id,score,label")?;
    for (id, s, l) in rows {
        let label = match l {
            Label::Spam => "1",
            Label::Regular => "0",
            Label::Unlabeled => "",
        };
        writeln!(w, "{id},{s},{label}")?;
    }
    w.flush()?;
    Ok(())
}

/// Labeled rows of a `comment_id,score,label` file.
fn read_scores(path: &Path) -> Result<ScoredSet> {
    let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if n == 0 && line.starts_with("comment_id") || line.trim().is_empty() {
            continue;
        }
        let parse = |msg: &str| GasError::Parse { line: n + 1, msg: msg.to_string() };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(parse("expected comment_id,score,label").into());
        }
        let label = match cols[2].trim() {
            "1" => true,
            "0" => false,
            "" => continue,
            _ => return Err(parse("label must be 0, 1 or empty").into()),
        };
        scores.push(cols[1].trim().parse::<f64>().map_err(|_| parse("score is not a number"))?);
        labels.push(label);
    }
    Ok(ScoredSet::new(scores, labels)?)
}

fn write_metrics(dir: &Path, set: &ScoredSet) -> Result<()> {
    write_json(&dir.join("metrics.json"), &metrics_report(set)?)?;
    let mut w = BufWriter::new(File::create(dir.join("pr.csv"))?);
    write_pr_csv(&mut w, &pr_curve(set))?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    comments: usize,
    users: usize,
    items: usize,
    spam: usize,
    regular: usize,
    unlabeled: usize,
}

pub fn ingest(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let dir = out_dir(out)?;
    let records = load_records(cfg)?;
    let graph = load_graph(cfg, records.clone())?;
    let count = |l: Label| records.iter().filter(|r| r.label == l).count();
    let summary = IngestSummary {
        comments: records.len(),
        users: graph.num_users(),
        items: graph.num_items(),
        spam: count(Label::Spam),
        regular: count(Label::Regular),
        unlabeled: count(Label::Unlabeled),
    };
    let mut w = BufWriter::new(File::create(dir.join("records.jsonl"))?);
    write_records(&mut w, &records)?;
    w.flush()?;
    write_json(&dir.join("ingest.json"), &summary)
}

pub fn synth(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let seed = seed(cfg, "synth")?;
    let dir = out_dir(out)?;
    let corpus = synth_corpus(&cfg.synth, seed)?;
    write_corpus(&dir, &corpus)?;
    #[derive(Serialize)]
    struct Manifest<'a> {
        seed: u64,
        config: &'a gas_core::synth::SynthConfig,
        comments: usize,
        spam: usize,
    }
    write_json(
        &dir.join("synth.json"),
        &Manifest {
            seed,
            config: &cfg.synth,
            comments: corpus.records.len(),
            spam: corpus.records.iter().filter(|r| r.label.is_spam()).count(),
        },
    )
}

pub fn build_knn(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let dir = out_dir(out)?;
    let records = load_records(cfg)?;
    let emb = load_embeddings(need(&cfg.paths.embeddings, "word vectors", "embeddings")?, cfg.model.word_dim)?;
    let (graph, manifest) =
        build_comment_graph(&records, &emb.vocab, &emb.table, &cfg.sif, &cfg.knn, cfg.seed.unwrap_or(0))?;
    graph.write_edge_list(dir.join("comment_graph.txt"))?;
    write_json(&dir.join("comment_graph.manifest.json"), &manifest)
}

pub fn train(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let seed = seed(cfg, "train")?;
    let dir = out_dir(out)?;
    let records = load_records(cfg)?;
    let loaded = match &cfg.paths.embeddings {
        Some(p) => Some(load_embeddings(p, cfg.model.word_dim)?),
        None => None,
    };
    let corpus: Vec<&Vec<String>> = records.iter().map(|r| &r.tokens).collect();
    let corpus: Vec<Vec<&str>> = corpus.iter().map(|t| t.iter().map(String::as_str).collect()).collect();
    let (vocab, words) = word_table_for(&corpus, loaded, cfg.model.word_dim, seed);
    let cg = load_comment_graph(cfg, cfg.model.variant == Variant::Gas)?;
    let graph = load_graph(cfg, records)?;
    let data = Dataset::new(graph, cg.as_ref())?;
    let model = Model::init(cfg.model.clone(), &data.graph, &vocab, &words, seed)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = seed;
    let outcome = train_model(&data, model, &tcfg)?;
    save_checkpoint(&outcome.model, dir.join("model.ckpt"))?;
    write_json(&dir.join("history.json"), &outcome.history)?;
    write_json(&dir.join("split.json"), &outcome.split)?;

    let test = &outcome.split.test;
    let scores = predict_batch(&outcome.model, &data, test, tcfg.batch_size)?;
    let rows: Vec<(&str, f64, Label)> = test
        .iter()
        .zip(&scores)
        .map(|(&e, &s)| {
            let r = data.graph.record(e);
            (r.comment_id.as_str(), s, r.label)
        })
        .collect();
    write_scores(&dir.join("test_scores.csv"), &rows)?;
    let set = ScoredSet::new(scores, test.iter().map(|&e| data.graph.record(e).label.is_spam()).collect())?;
    match write_metrics(&dir, &set) {
        Err(e) if matches!(e.downcast_ref::<GasError>(), Some(GasError::UndefinedMetric(_))) => {
            log::warn!("test metrics undefined: {e}");
            Ok(())
        }
        r => r,
    }
}

pub fn predict(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let dir = out_dir(out)?;
    let ckpt = need(&cfg.paths.checkpoint, "checkpoint", "checkpoint")?;
    let model = load_checkpoint(ckpt, None).with_context(|| format!("loading {}", ckpt.display()))?;
    let records = load_records(cfg)?;
    let cg = load_comment_graph(cfg, model.config().variant == Variant::Gas)?;
    let graph = load_graph(cfg, records)?;
    let data = Dataset::new(graph, cg.as_ref())?;
    let edges: Vec<usize> = (0..data.graph.num_edges()).collect();
    let scores = predict_batch(&model, &data, &edges, cfg.train.batch_size)?;
    let rows: Vec<(&str, f64, Label)> = edges
        .iter()
        .zip(&scores)
        .map(|(&e, &s)| {
            let r = data.graph.record(e);
            (r.comment_id.as_str(), s, r.label)
        })
        .collect();
    write_scores(&dir.join("scores.csv"), &rows)
}

pub fn eval(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let dir = out_dir(out)?;
    let set = read_scores(need(&cfg.paths.scores, "scores file", "scores")?)?;
    write_metrics(&dir, &set)
}

#[derive(Serialize)]
struct SpamNeighbors {
    spam: f64,
    regular: f64,
}

#[derive(Serialize)]
struct Diagnosis {
    smoothing: gas_core::eval::SmoothingReport,
    comment_graph: SpamNeighbors,
    local_graph: SpamNeighbors,
}

pub fn diagnose(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let dir = out_dir(out)?;
    let records = load_records(cfg)?;
    let emb = load_embeddings(need(&cfg.paths.embeddings, "word vectors", "embeddings")?, cfg.model.word_dim)?;
    let cg = load_comment_graph(cfg, true)?.ok_or_else(|| anyhow!("comment graph required"))?;
    let graph = BipartiteGraph::build(records)?;
    let aligned = AlignedCommentGraph::new(&cg, &graph)?;

    // smoothing over labeled comments only, neighbors restricted likewise
    let labeled: Vec<usize> = (0..graph.num_edges()).filter(|&e| graph.record(e).label != Label::Unlabeled).collect();
    let mut row_of = vec![usize::MAX; graph.num_edges()];
    for (r, &e) in labeled.iter().enumerate() {
        row_of[e] = r;
    }
    let x = record_embeddings(graph.records(), &emb.vocab, &emb.table, &cfg.sif)?;
    let d = x.cols();
    let data: Vec<f64> = labeled.iter().flat_map(|&e| x.data()[e * d..(e + 1) * d].to_vec()).collect();
    let x = gas_core::autodiff::Tensor::matrix(labeled.len(), d, data)?;
    let labels: Vec<bool> = labeled.iter().map(|&e| graph.record(e).label.is_spam()).collect();
    let neighbors: Vec<Vec<usize>> = labeled
        .iter()
        .map(|&e| {
            aligned.0[e]
                .iter()
                .map(|&(n, _)| row_of[n])
                .filter(|&r| r != usize::MAX)
                .collect()
        })
        .collect();
    let smoothing = smoothing_diagnostic(&x, &labels, &neighbors, cfg.seed.unwrap_or(0), &cfg.logreg)?;

    let is_spam = |e: usize| graph.record(e).label.is_spam();
    let spam: Vec<usize> = labeled.iter().copied().filter(|&e| is_spam(e)).collect();
    let regular: Vec<usize> = labeled.iter().copied().filter(|&e| !is_spam(e)).collect();
    let report = Diagnosis {
        smoothing,
        comment_graph: SpamNeighbors {
            spam: neighbor_spam_stats(&aligned, &spam, is_spam)?,
            regular: neighbor_spam_stats(&aligned, &regular, is_spam)?,
        },
        local_graph: SpamNeighbors {
            spam: neighbor_spam_stats(&graph, &spam, is_spam)?,
            regular: neighbor_spam_stats(&graph, &regular, is_spam)?,
        },
    };
    write_json(&dir.join("diagnose.json"), &report)
}
