use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Tensor;
use crate::graph::Label;

fn rec(c: &str, u: &str, i: &str, toks: &str) -> CommentRecord {
    CommentRecord {
        comment_id: c.into(),
        user_id: u.into(),
        item_id: i.into(),
        tokens: toks.split_whitespace().map(String::from).collect(),
        timestamp: 0,
        label: Label::Unlabeled,
    }
}

fn table(rows: &[&[f64]]) -> EmbeddingTable {
    let d = rows[0].len();
    EmbeddingTable {
        matrix: Tensor::matrix(rows.len(), d, rows.concat()).unwrap(),
    }
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| v / norm));
    }
    Tensor::matrix(n, d, data).unwrap()
}

fn power_iteration(x: &Tensor, iters: usize) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    let mut u = vec![1.0; d];
    for _ in 0..iters {
        let mut xu = vec![0.0; n];
        for r in 0..n {
            xu[r] = x.row(r).iter().zip(&u).map(|(a, b)| a * b).sum();
        }
        let mut next = vec![0.0; d];
        for r in 0..n {
            for (c, v) in next.iter_mut().enumerate() {
                *v += x.row(r)[c] * xu[r];
            }
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        u = next.iter().map(|v| v / norm).collect();
    }
    u
}

#[test]
fn dedup_groups_identical_sequences() {
    let rs = vec![
        rec("c5", "u", "i", "a b"),
        rec("c2", "u", "i", "b c"),
        rec("c1", "u", "i", "a b"),
        rec("c3", "u", "i", "d"),
        rec("c4", "u", "i", "e"),
    ];
    let d = dedup(&rs);
    assert_eq!(d.num_unique(), 4);
    assert_eq!(d.groups[0], vec![0, 2]);
    assert_eq!(d.representatives[0], 2);

    let copies = vec![rec("x", "u", "i", "z"), rec("y", "u", "i", "z"), rec("w", "u", "i", "z")];
    let d = dedup(&copies);
    assert_eq!(d.num_unique(), 1);
    assert_eq!(d.groups[0].len(), 3);
    assert_eq!(d.representatives[0], 2);

    let distinct = vec![rec("x", "u", "i", "a"), rec("y", "u", "i", "b")];
    assert_eq!(dedup(&distinct).representatives, vec![0, 1]);
}

#[test]
fn sif_single_word_without_pc() {
    let t = table(&[&[0.0, 0.0], &[0.0, 0.0], &[2.0, -4.0]]);
    let probs = [0.0, 0.0, 0.25];
    let cfg = SifConfig { a: 0.25, remove_pc: false };
    let e = sif_embed(&[vec![2]], &t, &probs, &cfg).unwrap();
    assert_eq!(e.data(), &[1.0, -2.0]);
    let z = sif_embed(&[vec![]], &t, &probs, &cfg).unwrap();
    assert_eq!(z.data(), &[0.0, 0.0]);
    assert!(sif_embed(&[], &t, &probs, &cfg).is_err());
}

#[test]
fn sif_identical_sentences_collapse() {
    let t = table(&[&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0], &[1.0, 2.0, 0.5], &[-1.0, 0.0, 3.0]]);
    let probs = [0.0, 0.0, 0.5, 0.5];
    let seqs = vec![vec![2, 3]; 4];
    let e = sif_embed(&seqs, &t, &probs, &SifConfig::default()).unwrap();
    for r in 0..4 {
        assert_eq!(e.row(r), e.row(0));
        assert!(e.row(r).iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn principal_direction_matches_power_iteration() {
    let t = table(&[
        &[0.0, 0.0, 0.0],
        &[0.0, 0.0, 0.0],
        &[1.0, 0.2, 0.0],
        &[0.3, -1.0, 0.5],
        &[0.1, 0.4, 2.0],
    ]);
    let probs = [0.0, 0.0, 0.4, 0.3, 0.3];
    let seqs = vec![vec![2, 3], vec![4], vec![2, 4, 4]];
    let raw = sif_embed(&seqs, &t, &probs, &SifConfig { a: 0.1, remove_pc: false }).unwrap();
    let u = first_principal_direction(&raw).unwrap();
    let oracle = power_iteration(&raw, 500);
    let align: f64 = u.iter().zip(&oracle).map(|(a, b)| a * b).sum();
    assert!((align.abs() - 1.0).abs() < 1e-10, "alignment {align}");

    let cleaned = sif_embed(&seqs, &t, &probs, &SifConfig { a: 0.1, remove_pc: true }).unwrap();
    for r in 0..3 {
        let proj: f64 = cleaned.row(r).iter().zip(&oracle).map(|(a, b)| a * b).sum();
        assert!(proj.abs() < 1e-8, "residual {proj}");
    }
}

#[test]
fn saturated_knn_lists_every_other_node() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_unit(&mut rng, 6, 4);
    let cfg = KnnConfig { k: 5, ..KnnConfig::default() };
    let lists = nn_descent(&x, &cfg, 1).unwrap();
    let exact = brute_force_knn(&x, 5).unwrap();
    assert_eq!(lists.neighbors, exact);
    assert!(nn_descent(&x, &KnnConfig { k: 6, ..cfg }, 1).is_err());
}

#[test]
fn descent_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_unit(&mut rng, 150, 8);
    let cfg = KnnConfig::default();
    assert_eq!(nn_descent(&x, &cfg, 9).unwrap(), nn_descent(&x, &cfg, 9).unwrap());
}

#[test]
fn separated_clusters_have_no_cross_links() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut data = Vec::new();
    for c in 0..2 {
        for _ in 0..40 {
            let mut row = vec![0.0; 6];
            row[c * 3] = 1.0;
            for v in row.iter_mut() {
                *v += rng.random_range(-0.05..0.05);
            }
            data.extend(row);
        }
    }
    let x = Tensor::matrix(80, 6, data).unwrap();
    let exact = brute_force_knn(&x, 5).unwrap();
    for (i, list) in exact.iter().enumerate() {
        assert!(list.iter().all(|&(j, _)| j / 40 == i / 40));
    }
    let approx = nn_descent(&x, &KnnConfig { k: 5, ..KnnConfig::default() }, 2).unwrap();
    assert!(knn_recall(&approx.neighbors, &exact) >= 0.9);
}

#[test]
fn filter_drops_same_user_and_item_pairs() {
    let rs = vec![
        rec("a", "u1", "i1", "buy now"),
        rec("b", "u1", "i2", "buy now please"),
        rec("c", "u2", "i3", "buy now vx"),
        rec("d", "u3", "i1", "buy vx"),
    ];
    let groups = dedup(&rs);
    let cands = vec![
        vec![(1, 0.9), (2, 0.8), (3, 0.7)],
        vec![(0, 0.9)],
        vec![(0, 0.8)],
        vec![(0, 0.7)],
    ];
    let g = filter_pairs(&cands, &groups, &rs, None);
    assert_eq!(g.num_edges(), 1);
    assert_eq!(g.neighbors(0), &[(2, 0.8)]);
    let g = filter_pairs(&cands, &groups, &rs, Some(0.85));
    assert_eq!(g.num_edges(), 0);
}

#[test]
fn duplicates_inherit_links() {
    let rs = vec![
        rec("a", "u1", "i1", "add vx"),
        rec("b", "u2", "i2", "add vx"),
        rec("c", "u3", "i3", "add wx"),
    ];
    let groups = dedup(&rs);
    assert_eq!(groups.num_unique(), 2);
    let cands = vec![vec![(1, 0.95)], vec![(0, 0.95)]];
    let g = filter_pairs(&cands, &groups, &rs, None);
    // the duplicate pair itself stays unlinked
    assert_eq!(g.num_edges(), 2);
    assert_eq!(g.neighbors(2).len(), 2);
    assert!(g.neighbors(0).iter().all(|&(n, _)| n == 2));
}
