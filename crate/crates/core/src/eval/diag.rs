use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{f1_at, roc_auc, ScoredSet};
use crate::autodiff::Tensor;
use crate::error::{GasError, Result};
use crate::graph::{neighbor_spam_stats, AlignedCommentGraph, BipartiteGraph};

/// Full-batch gradient descent on the L2-regularised logistic loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Share of rows held out for testing.
    pub test_fraction: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            iterations: 200,
            learning_rate: 0.1,
            l2: 1e-4,
            test_fraction: 0.3,
        }
    }
}

/// A fitted logistic regression over standardised features.
#[derive(Clone, Debug, PartialEq)]
pub struct LogReg {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w: Vec<f64>,
    b: f64,
}

impl LogReg {
    /// Features are standardised with the training rows' mean and standard
    /// deviation before descent.
    pub fn fit(x: &Tensor, rows: &[usize], labels: &[bool], cfg: &LogRegConfig) -> Self {
        let d = x.cols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            mean.iter_mut().zip(x.row(r)).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale: Vec<f64> = var.iter().map(|v| if *v > 0.0 { 1.0 / v.sqrt() } else { 0.0 }).collect();
        let z: Vec<Vec<f64>> = rows
            .iter()
            .map(|&r| x.row(r).iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) * s).collect())
            .collect();
        let mut model = LogReg {
            mean,
            scale,
            w: vec![0.0; d],
            b: 0.0,
        };
        for _ in 0..cfg.iterations {
            let mut gw: Vec<f64> = model.w.iter().map(|w| cfg.l2 * w).collect();
            let mut gb = 0.0;
            for (zr, &r) in z.iter().zip(rows) {
                let logit: f64 = model.b + zr.iter().zip(&model.w).map(|(a, b)| a * b).sum::<f64>();
                let err = (crate::autodiff::sigmoid(logit) - labels[r] as u8 as f64) / n;
                gb += err;
                gw.iter_mut().zip(zr).for_each(|(g, v)| *g += err * v);
            }
            model.w.iter_mut().zip(&gw).for_each(|(w, g)| *w -= cfg.learning_rate * g);
            model.b -= cfg.learning_rate * gb;
        }
        model
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let logit: f64 = self.b
            + row
                .iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.w)
                .map(|(((v, m), s), w)| (v - m) * s * w)
                .sum::<f64>();
        crate::autodiff::sigmoid(logit)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucF1 {
    pub auc: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub raw: AucF1,
    pub smoothed: AucF1,
}

/// Each row replaced by the mean of itself and its graph neighbors.
pub fn smooth(x: &Tensor, neighbors: &[Vec<usize>]) -> Result<Tensor> {
    let d = x.cols();
    let mut out = Vec::with_capacity(x.len());
    for (r, nbrs) in neighbors.iter().enumerate().take(x.rows()) {
        let mut acc = x.row(r).to_vec();
        for &n in nbrs {
            if n >= x.rows() {
                return Err(GasError::Lookup {
                    kind: "row",
                    id: n.to_string(),
                });
            }
            acc.iter_mut().zip(x.row(n)).for_each(|(a, v)| *a += v);
        }
        let k = (nbrs.len() + 1) as f64;
        out.extend(acc.iter().map(|a| a / k));
    }
    for r in neighbors.len()..x.rows() {
        out.extend_from_slice(x.row(r));
    }
    Tensor::matrix(x.rows(), d, out)
}

/// Trains one logistic regression on the raw rows and one on the smoothed
/// rows, over the same seeded split, and reports test AUC and F1 of both.
pub fn smoothing_diagnostic(
    x: &Tensor,
    labels: &[bool],
    neighbors: &[Vec<usize>],
    seed: u64,
    cfg: &LogRegConfig,
) -> Result<SmoothingReport> {
    if labels.len() != x.rows() || neighbors.len() != x.rows() {
        return Err(GasError::Shape {
            op: "smoothing_diagnostic",
            left: vec![x.rows()],
            right: vec![labels.len(), neighbors.len()],
        });
    }
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((x.rows() as f64) * cfg.test_fraction).round() as usize;
    let (test, train) = order.split_at(n_test.min(x.rows()));
    let smoothed = smooth(x, neighbors)?;
    let run = |m: &Tensor| -> Result<AucF1> {
        let model = LogReg::fit(m, train, labels, cfg);
        let scores: Vec<f64> = test.iter().map(|&r| model.predict(m.row(r))).collect();
        let s = ScoredSet::new(scores, test.iter().map(|&r| labels[r]).collect())?;
        Ok(AucF1 {
            auc: roc_auc(&s)?,
            f1: f1_at(&s, 0.5),
        })
    };
    Ok(SmoothingReport {
        raw: run(x)?,
        smoothed: run(&smoothed)?,
    })
}

/// Neighbor statistics of one group of comments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    /// Mean spam count within one hop on the user–item–comment graph.
    pub mean_spam_bipartite: f64,
    /// Mean spam count within one hop on the comment graph.
    pub mean_spam_comment: f64,
}

/// Spam recalled by the full model but missed by the local-only model,
/// against every spam comment the local model missed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub threshold_full: f64,
    pub threshold_local: f64,
    pub recovered: GroupStats,
    pub local_missed: GroupStats,
}

fn group_stats(graph: &BipartiteGraph, comment: &AlignedCommentGraph, edges: &[usize]) -> Result<GroupStats> {
    let is_spam = |e: usize| graph.record(e).label.is_spam();
    Ok(GroupStats {
        count: edges.len(),
        mean_spam_bipartite: neighbor_spam_stats(graph, edges, is_spam)?,
        mean_spam_comment: neighbor_spam_stats(comment, edges, is_spam)?,
    })
}

/// Splits the spam among `edges` by which model flags it (`score >=
/// threshold`) and measures each group's spam neighborhoods. Neighbor labels
/// come from the graph's records.
pub fn case_study(
    graph: &BipartiteGraph,
    comment: &AlignedCommentGraph,
    edges: &[usize],
    full: &[f64],
    local: &[f64],
    threshold_full: f64,
    threshold_local: f64,
) -> Result<CaseStudy> {
    if full.len() != edges.len() || local.len() != edges.len() {
        return Err(GasError::Shape {
            op: "case_study",
            left: vec![edges.len()],
            right: vec![full.len(), local.len()],
        });
    }
    let mut recovered = Vec::new();
    let mut missed = Vec::new();
    for (k, &e) in edges.iter().enumerate() {
        if !graph.record(e).label.is_spam() || local[k] >= threshold_local {
            continue;
        }
        missed.push(e);
        if full[k] >= threshold_full {
            recovered.push(e);
        }
    }
    Ok(CaseStudy {
        threshold_full,
        threshold_local,
        recovered: group_stats(graph, comment, &recovered)?,
        local_missed: group_stats(graph, comment, &missed)?,
    })
}
