//! Comment graph construction: deduplication, SIF sentence embeddings,
//! NN-Descent approximate KNN over cosine similarity, and the
//! same-user/same-item filter.

mod descent;
mod sif;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use descent::{brute_force_knn, knn_recall, nn_descent, KnnConfig, KnnLists};
pub use sif::{first_principal_direction, sif_embed, SifConfig};

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::graph::{CommentGraph, CommentRecord};
use crate::text::{map_tokens, EmbeddingTable, Vocabulary};

/// Records collapsed by identical token sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dedup {
    /// Record index of each representative, in order of first appearance.
    pub representatives: Vec<usize>,
    /// `groups[g]` lists every record index sharing representative `g`,
    /// ascending.
    pub groups: Vec<Vec<usize>>,
}

impl Dedup {
    pub fn num_unique(&self) -> usize {
        self.representatives.len()
    }
}

/// Groups records with identical token sequences. The representative is the
/// member with the smallest comment id.
pub fn dedup(records: &[CommentRecord]) -> Dedup {
    let mut by_tokens: HashMap<&[String], usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let g = *by_tokens.entry(r.tokens.as_slice()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    let representatives = groups
        .iter()
        .map(|g| {
            *g.iter()
                .min_by(|&&a, &&b| records[a].comment_id.cmp(&records[b].comment_id))
                .expect("non-empty group")
        })
        .collect();
    Dedup {
        representatives,
        groups,
    }
}

/// Turns candidate lists over unique comments into the comment graph.
///
/// A pair is linked if either side proposed it. Every duplicate inherits its
/// representative's links, and each expanded pair is kept only if the two
/// comments differ in both user and item. Members of one duplicate group are
/// never linked to each other. `min_similarity` drops weaker pairs.
pub fn filter_pairs(
    candidates: &[Vec<(usize, f64)>],
    groups: &Dedup,
    records: &[CommentRecord],
    min_similarity: Option<f64>,
) -> CommentGraph {
    let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (a, list) in candidates.iter().enumerate() {
        for &(b, sim) in list {
            if a == b || min_similarity.is_some_and(|t| sim < t) {
                continue;
            }
            let key = (a.min(b), a.max(b));
            let e = pairs.entry(key).or_insert(sim);
            *e = e.max(sim);
        }
    }
    let mut g = CommentGraph::new(records.iter().map(|r| r.comment_id.clone()));
    for (&(a, b), &sim) in &pairs {
        for &x in &groups.groups[a] {
            for &y in &groups.groups[b] {
                let (rx, ry) = (&records[x], &records[y]);
                if rx.user_id != ry.user_id && rx.item_id != ry.item_id {
                    g.add_edge(x, y, sim);
                }
            }
        }
    }
    g.finish();
    g
}

/// Settings and provenance written next to a comment graph edge list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnManifest {
    pub metric: String,
    pub sif_a: f64,
    pub remove_pc: bool,
    pub k: usize,
    pub iterations: usize,
    pub sample_rate: f64,
    pub delta: f64,
    pub min_similarity: Option<f64>,
    pub seed: u64,
    pub comments: usize,
    pub unique_comments: usize,
    pub edges: usize,
}

/// Relative token frequencies over all of `records`.
pub fn word_probabilities(records: &[CommentRecord], vocab: &Vocabulary) -> Vec<f64> {
    let mut counts = vec![0u64; vocab.len()];
    for r in records {
        for id in map_tokens(&r.tokens, vocab) {
            counts[id] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect()
}

/// One SIF row per record, in record order.
pub fn record_embeddings(
    records: &[CommentRecord],
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    sif: &SifConfig,
) -> Result<Tensor> {
    let seqs: Vec<Vec<usize>> = records.iter().map(|r| map_tokens(&r.tokens, vocab)).collect();
    sif_embed(&seqs, table, &word_probabilities(records, vocab), sif)
}

/// dedup → SIF embedding → NN-Descent → filter. Word probabilities come from
/// token frequencies in `records`.
pub fn build_comment_graph(
    records: &[CommentRecord],
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    sif: &SifConfig,
    knn: &KnnConfig,
    seed: u64,
) -> Result<(CommentGraph, KnnManifest)> {
    let groups = dedup(records);
    let seqs: Vec<Vec<usize>> = groups
        .representatives
        .iter()
        .map(|&r| map_tokens(&records[r].tokens, vocab))
        .collect();
    let probs = word_probabilities(records, vocab);
    let emb = sif_embed(&seqs, table, &probs, sif)?;
    let lists = nn_descent(&emb, knn, seed)?;
    let graph = filter_pairs(&lists.neighbors, &groups, records, knn.min_similarity);
    let manifest = KnnManifest {
        metric: "cosine".into(),
        sif_a: sif.a,
        remove_pc: sif.remove_pc,
        k: knn.k,
        iterations: knn.iterations,
        sample_rate: knn.sample_rate,
        delta: knn.delta,
        min_similarity: knn.min_similarity,
        seed,
        comments: records.len(),
        unique_comments: groups.num_unique(),
        edges: graph.num_edges(),
    };
    Ok((graph, manifest))
}

#[cfg(test)]
mod tests;
