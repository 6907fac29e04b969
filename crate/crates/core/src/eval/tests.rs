use proptest::prelude::*;

use super::*;
use crate::autodiff::Tensor;

fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
    ScoredSet::new(scores.to_vec(), labels.iter().map(|&l| l == 1).collect()).unwrap()
}

#[test]
fn auc_examples() {
    assert_eq!(roc_auc(&set(&[0.9, 0.4, 0.6, 0.1], &[1, 0, 1, 0])).unwrap(), 1.0);
    assert_eq!(roc_auc(&set(&[0.9, 0.4, 0.6, 0.1], &[1, 1, 0, 0])).unwrap(), 0.75);
    assert_eq!(roc_auc(&set(&[0.3; 6], &[1, 0, 1, 0, 0, 1])).unwrap(), 0.5);
    assert!(matches!(roc_auc(&set(&[0.1, 0.2], &[1, 1])), Err(crate::GasError::UndefinedMetric(_))));
}

#[test]
fn f1_examples() {
    assert_eq!(f1_at(&set(&[0.9, 0.1], &[1, 0]), 0.5), 1.0);
    assert_eq!(f1_at(&set(&[0.2, 0.1], &[1, 0]), 0.5), 0.0);
    // TP = 2, FP = 1, FN = 1
    let s = set(&[0.9, 0.8, 0.7, 0.2, 0.1], &[1, 1, 0, 1, 0]);
    assert!((f1_at(&s, 0.5) - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn recall_at_precision_examples() {
    assert_eq!(recall_at_precision(&set(&[0.9, 0.8, 0.1], &[1, 1, 0]), 0.9), 1.0);
    // best attainable precision is 0.8 (4 of 5 at the top)
    let s = set(&[0.9, 0.9, 0.9, 0.9, 0.9, 0.1], &[1, 1, 1, 1, 0, 0]);
    assert_eq!(recall_at_precision(&s, 0.9), 0.0);
    let s = set(
        &[0.95, 0.9, 0.85, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2],
        &[1, 1, 0, 1, 1, 0, 1, 0, 0, 1],
    );
    // precision by cut: 1, 1, 2/3, 3/4, 4/5, 4/6, 5/7, ...; cut 2 has recall 2/6
    assert!((recall_at_precision(&s, 0.9) - 2.0 / 6.0).abs() < 1e-15);
    assert!((recall_at_precision(&s, 0.8) - 4.0 / 6.0).abs() < 1e-15);
}

#[test]
fn pr_curve_examples() {
    let pts = pr_curve(&set(&[0.9, 0.1], &[1, 0]));
    assert_eq!(pts.len(), 2);
    assert_eq!((pts[1].precision, pts[1].recall), (1.0, 1.0));
    assert_eq!((pts[0].precision, pts[0].recall), (0.5, 1.0));
    let pts = pr_curve(&set(&[0.4; 4], &[1, 0, 0, 0]));
    assert_eq!(pts.len(), 1);
    assert_eq!((pts[0].precision, pts[0].recall), (0.25, 1.0));
    let mut buf = Vec::new();
    write_pr_csv(&mut buf, &pts).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "threshold,precision,recall\n0.4,0.25,1\n");
}

#[test]
fn report_fields() {
    let r = metrics_report(&set(&[0.9, 0.6, 0.2], &[1, 0, 0])).unwrap();
    assert_eq!((r.auc, r.f1, r.recall_at_90p, r.n_pos, r.n_neg), (1.0, 2.0 / 3.0, 1.0, 1, 2));
    let json = serde_json::to_value(&r).unwrap();
    assert!(json.get("recall_at_90p").is_some());
}

fn clustered(n: usize, noise: f64) -> (Tensor, Vec<bool>, Vec<Vec<usize>>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for r in 0..n {
        let l = r % 2 == 0;
        labels.push(l);
        let c = if l { 1.0 } else { -1.0 };
        data.push(c + rng.random_range(-noise..noise));
        data.push(rng.random_range(-1.0..1.0));
    }
    (Tensor::matrix(n, 2, data).unwrap(), labels, vec![Vec::new(); n])
}

#[test]
fn empty_graph_leaves_metrics_unchanged() {
    let (x, labels, nbrs) = clustered(60, 3.0);
    let r = smoothing_diagnostic(&x, &labels, &nbrs, 4, &LogRegConfig::default()).unwrap();
    assert_eq!(r.raw, r.smoothed);
}

#[test]
fn smoothing_within_label_cliques_separates_classes() {
    let (x, labels, _) = clustered(60, 3.0);
    let nbrs: Vec<Vec<usize>> = (0..60).map(|r| (0..60).filter(|&o| o != r && o % 2 == r % 2).collect()).collect();
    let r = smoothing_diagnostic(&x, &labels, &nbrs, 4, &LogRegConfig::default()).unwrap();
    assert_eq!(r.smoothed.auc, 1.0);
    assert!(r.smoothed.auc >= r.raw.auc);
}

proptest! {
    #[test]
    fn auc_invariant_under_monotone_transform(
        raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..60)
    ) {
        let s = ScoredSet::new(raw.iter().map(|r| r.0).collect(), raw.iter().map(|r| r.1).collect()).unwrap();
        prop_assume!(s.n_pos() > 0 && s.n_neg() > 0);
        let t = ScoredSet::new(s.scores.iter().map(|v| (3.0 * v).exp() - 7.0).collect(), s.labels.clone()).unwrap();
        prop_assert_eq!(roc_auc(&s).unwrap(), roc_auc(&t).unwrap());
    }

    #[test]
    fn recall_at_precision_non_increasing(
        raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 1..60),
        p in 0.0f64..1.0,
        dp in 0.0f64..0.5,
    ) {
        let s = ScoredSet::new(raw.iter().map(|r| (r.0 * 10.0).round() / 10.0).collect(), raw.iter().map(|r| r.1).collect()).unwrap();
        prop_assert!(recall_at_precision(&s, (p + dp).min(1.0)) <= recall_at_precision(&s, p));
    }

    #[test]
    fn pr_recall_monotone(raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 1..60)) {
        let s = ScoredSet::new(raw.iter().map(|r| (r.0 * 10.0).round() / 10.0).collect(), raw.iter().map(|r| r.1).collect()).unwrap();
        let pts = pr_curve(&s);
        for w in pts.windows(2) {
            prop_assert!(w[0].threshold < w[1].threshold);
            prop_assert!(w[0].recall >= w[1].recall);
        }
    }
}
