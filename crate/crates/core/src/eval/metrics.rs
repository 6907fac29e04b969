use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{GasError, Result};

/// Scores with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(GasError::Shape {
                op: "scored_set",
                left: vec![scores.len()],
                right: vec![labels.len()],
            });
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(GasError::NonFinite(format!("score {s}")));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    /// Indices sorted by descending score.
    fn descending(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        order
    }

    /// `(threshold, tp, fp)` for every distinct score, descending; a score
    /// counts as positive when it is at least the threshold.
    fn confusion_by_threshold(&self) -> Vec<(f64, usize, usize)> {
        let order = self.descending();
        let mut out = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        let mut k = 0;
        while k < order.len() {
            let t = self.scores[order[k]];
            while k < order.len() && self.scores[order[k]] == t {
                if self.labels[order[k]] {
                    tp += 1;
                } else {
                    fp += 1;
                }
                k += 1;
            }
            out.push((t, tp, fp));
        }
        out
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn roc_auc(s: &ScoredSet) -> Result<f64> {
    let (p, n) = (s.n_pos(), s.n_neg());
    if p == 0 || n == 0 {
        return Err(GasError::UndefinedMetric(format!("AUC needs both classes, got {p} positive and {n} negative")));
    }
    // ascending sweep: each positive beats the negatives strictly below it
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    let mut below = 0usize;
    let mut twice_wins = 0u128;
    let mut k = 0;
    while k < order.len() {
        let t = s.scores[order[k]];
        let (mut gp, mut gn) = (0usize, 0usize);
        while k < order.len() && s.scores[order[k]] == t {
            if s.labels[order[k]] {
                gp += 1;
            } else {
                gn += 1;
            }
            k += 1;
        }
        twice_wins += (2 * gp * below + gp * gn) as u128;
        below += gn;
    }
    Ok(twice_wins as f64 / (2.0 * p as f64 * n as f64))
}

fn f1(tp: usize, fp: usize, fnn: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fnn) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// F1 of the rule `score >= threshold`; 0 when nothing is predicted positive.
pub fn f1_at(s: &ScoredSet, threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fnn) = (0, 0, 0);
    for (&sc, &l) in s.scores.iter().zip(&s.labels) {
        match (sc >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    f1(tp, fp, fnn)
}

/// Largest threshold-rule recall whose precision is at least `p`, together
/// with the lowest threshold achieving it. `None` if no threshold qualifies.
pub fn operating_point(s: &ScoredSet, p: f64) -> Option<(f64, f64)> {
    let pos = s.n_pos();
    if pos == 0 {
        return None;
    }
    let mut best: Option<(f64, f64)> = None;
    for (t, tp, fp) in s.confusion_by_threshold() {
        if tp as f64 >= p * (tp + fp) as f64 {
            let r = tp as f64 / pos as f64;
            if best.is_none_or(|(_, br)| r >= br) {
                best = Some((t, r));
            }
        }
    }
    best
}

/// Maximum recall over thresholds with precision ≥ `p`; 0 if none qualifies.
pub fn recall_at_precision(s: &ScoredSet, p: f64) -> f64 {
    operating_point(s, p).map_or(0.0, |(_, r)| r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One point per distinct score, by ascending threshold, so recall is
/// non-increasing along the list. Recall is 0 throughout when there are no
/// positives.
pub fn pr_curve(s: &ScoredSet) -> Vec<PrPoint> {
    let pos = s.n_pos();
    let mut pts: Vec<PrPoint> = s
        .confusion_by_threshold()
        .into_iter()
        .map(|(t, tp, fp)| PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: if pos == 0 { 0.0 } else { tp as f64 / pos as f64 },
        })
        .collect();
    pts.reverse();
    pts
}

pub fn write_pr_csv<W: Write>(mut w: W, points: &[PrPoint]) -> Result<()> {
    writeln!(w, "threshold,precision,recall")?;
    for p in points {
        writeln!(w, "{},{},{}", p.threshold, p.precision, p.recall)?;
    }
    Ok(())
}

/// The evaluation report written by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub f1: f64,
    pub recall_at_90p: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn metrics_report(s: &ScoredSet) -> Result<MetricsReport> {
    Ok(MetricsReport {
        auc: roc_auc(s)?,
        f1: f1_at(s, 0.5),
        recall_at_90p: recall_at_precision(s, 0.9),
        n_pos: s.n_pos(),
        n_neg: s.n_neg(),
    })
}
