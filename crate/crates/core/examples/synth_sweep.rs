//! Trains every variant on synthetic corpora and prints test AUC.
//! Usage: synth_sweep [seeds] [epochs]
//! Env: `SYNTH` (JSON SynthConfig override), `M_COMMENT` (comment-graph
//! fan-out), `ONLY_GAS` (skip the other variants).

use std::time::Instant;

use gas_core::eval::{roc_auc, ScoredSet};
use gas_core::graph::{BipartiteGraph, NodeFeatures};
use gas_core::knn::{build_comment_graph, KnnConfig, SifConfig};
use gas_core::model::{predict_batch, train, Dataset, Model, ModelConfig, TrainConfig, Variant};
use gas_core::synth::{synth_corpus, SynthConfig};

fn main() -> gas_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(1, |s| s.parse().unwrap());
    let epochs: usize = args.get(2).map_or(6, |s| s.parse().unwrap());
    let scfg: SynthConfig = match std::env::var("SYNTH") {
        Ok(j) => serde_json::from_str(&j).expect("SYNTH json"),
        Err(_) => SynthConfig::default(),
    };
    for seed in 0..seeds {
        let c = synth_corpus(&scfg, seed)?;
        let t = Instant::now();
        let (cg, man) = build_comment_graph(&c.records, &c.vocab, &c.embeddings, &SifConfig::default(), &KnnConfig::default(), seed)?;
        let spam: Vec<bool> = c.records.iter().map(|r| r.label.is_spam()).collect();
        let mut graph = BipartiteGraph::build(c.records.clone())?;
        graph.attach_features(&NodeFeatures { users: c.user_features.clone(), items: c.item_features.clone() })?;
        let homo: f64 = {
            let mut s = 0.0;
            let mut n = 0.0;
            for a in 0..cg.len() {
                if !spam[a] { continue; }
                for &(b, _) in cg.neighbors(a) { s += spam[b] as u8 as f64; n += 1.0; }
            }
            s / n
        };
        // campaign kind: 0 benign, 1 single-account, 2 deformed, 3 coupon, 4 covert
        let kind: Vec<usize> = c.records.iter().map(|r| {
            if !r.label.is_spam() { 0 }
            else if r.tokens.iter().any(|t| t.contains('~')) { 2 }
            else if r.tokens.iter().any(|t| t.starts_with("coupon")) { 3 }
            else if r.tokens.iter().any(|t| t.starts_with("contact") || t.starts_with("sale")) { 1 }
            else { 4 }
        }).collect();
        for k in 1..5 {
            let (mut s, mut n, mut cnt) = (0.0, 0.0, 0);
            for a in 0..cg.len() {
                if kind[a] != k { continue; }
                cnt += 1;
                for &(b, _) in cg.neighbors(a) { s += spam[b] as u8 as f64; n += 1.0; }
            }
            println!("  kind {k}: {cnt} posts, spam-neighbor share {:.3}", s / n);
        }
        println!("seed {seed}: knn {:.1}s edges {} spam-neighbor share of spam {:.3}", t.elapsed().as_secs_f64(), man.edges, homo);
        let data = Dataset::new(graph, Some(&cg))?;
        let m_comment: usize = std::env::var("M_COMMENT").map_or(10, |s| s.parse().unwrap());
        let only_gas = std::env::var("ONLY_GAS").is_ok();
        for (variant, layers) in [(Variant::Baseline, 1), (Variant::GasLocal, 1), (Variant::GasLocal, 2), (Variant::Gas, 2)] {
            if only_gas && variant != Variant::Gas { continue; }
            let mcfg = ModelConfig { variant, layers, hidden: 32, classifier_hidden: 32, filters: 32, m_comment, ..ModelConfig::default() };
            let t = Instant::now();
            let model = Model::init(mcfg, &data.graph, &c.vocab, &c.embeddings, seed)?;
            let tcfg = TrainConfig { epochs, seed, ..TrainConfig::default() };
            let out = train(&data, model, &tcfg)?;
            let scores = predict_batch(&out.model, &data, &out.split.test, 256)?;
            let labels: Vec<bool> = out.split.test.iter().map(|&e| spam[e]).collect();
            let auc = roc_auc(&ScoredSet::new(scores.clone(), labels.clone())?)?;
            let per: Vec<String> = (1..5).map(|k| {
                let idx: Vec<usize> = (0..scores.len()).filter(|&j| kind[out.split.test[j]] == 0 || kind[out.split.test[j]] == k).collect();
                let set = ScoredSet::new(idx.iter().map(|&j| scores[j]).collect(), idx.iter().map(|&j| labels[j]).collect());
                set.and_then(|s| roc_auc(&s)).map_or("-".into(), |a| format!("{a:.3}"))
            }).collect();
            println!("  {variant} L{layers}: auc {auc:.4} per kind {per:?} best epoch {:?} ({:.1}s)", out.best_epoch, t.elapsed().as_secs_f64());
        }
    }
    Ok(())
}
