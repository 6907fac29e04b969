//! NN-Descent against the exact scan.

use gas_core::autodiff::Tensor;
use gas_core::knn::{brute_force_knn, knn_recall, nn_descent, KnnConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_unit(seed: u64, n: usize, d: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| v / norm));
    }
    Tensor::matrix(n, d, data).unwrap()
}

#[test]
fn recall_on_random_unit_vectors() {
    let x = random_unit(11, 2000, 32);
    let approx = nn_descent(&x, &KnnConfig::default(), 7).unwrap();
    let exact = brute_force_knn(&x, 10).unwrap();
    let r = knn_recall(&approx.neighbors, &exact);
    eprintln!("recall {r:.4} after {} rounds", approx.rounds);
    assert!(r >= 0.90);
}

#[test]
fn small_inputs_match_exact_scan() {
    for seed in 0..5 {
        let x = random_unit(100 + seed, 200, 16);
        let cfg = KnnConfig {
            k: 10,
            iterations: 1000,
            sample_rate: 1.0,
            delta: 0.0,
            min_similarity: None,
            pool: 2,
        };
        let approx = nn_descent(&x, &cfg, seed).unwrap();
        let exact = brute_force_knn(&x, 10).unwrap();
        assert_eq!(approx.neighbors, exact, "seed {seed}");
    }
}
