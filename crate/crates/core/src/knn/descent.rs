use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{GasError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    /// Maximum number of local-join rounds.
    pub iterations: usize,
    /// Fraction ρ of each list sampled into a round's local join.
    pub sample_rate: f64,
    /// Stop once a round updates fewer than `delta · n · K` entries.
    pub delta: f64,
    /// Drop pairs below this cosine similarity when building the graph.
    pub min_similarity: Option<f64>,
    /// Working lists hold `pool · K` candidates; the best `K` are returned.
    pub pool: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 10,
            iterations: 10,
            sample_rate: 0.5,
            delta: 0.001,
            min_similarity: None,
            pool: 2,
        }
    }
}

/// Per-node neighbor lists sorted by (similarity desc, index asc).
#[derive(Clone, Debug, PartialEq)]
pub struct KnnLists {
    pub neighbors: Vec<Vec<(usize, f64)>>,
    /// Local-join rounds actually run.
    pub rounds: usize,
}

fn normalized(x: &Tensor) -> Vec<f64> {
    let d = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d.max(1)) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

#[derive(Clone, Copy)]
struct Entry {
    id: usize,
    sim: f64,
    fresh: bool,
}

/// Bounded list kept sorted best first.
struct Heap {
    k: usize,
    items: Vec<Entry>,
}

impl Heap {
    fn push(&mut self, id: usize, sim: f64) -> bool {
        if self.items.iter().any(|e| e.id == id) {
            return false;
        }
        if self.items.len() == self.k {
            let worst = self.items[self.k - 1];
            if !better((sim, id), (worst.sim, worst.id)) {
                return false;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|e| better((e.sim, e.id), (sim, id)));
        self.items.insert(pos, Entry { id, sim, fresh: true });
        true
    }
}

fn pick(rng: &mut ChaCha8Rng, from: &[usize], amount: usize) -> Vec<usize> {
    if from.len() <= amount {
        return from.to_vec();
    }
    let mut idx = sample(rng, from.len(), amount).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| from[i]).collect()
}

/// Approximate K nearest neighbors under cosine similarity by NN-Descent.
/// Zero vectors have similarity 0 to everything.
pub fn nn_descent(x: &Tensor, cfg: &KnnConfig, seed: u64) -> Result<KnnLists> {
    let n = x.rows();
    let k = cfg.k;
    if k == 0 || n <= k {
        return Err(GasError::Config(format!("KNN needs 1 <= K < n, got K={k}, n={n}")));
    }
    if !(cfg.sample_rate > 0.0 && cfg.sample_rate <= 1.0) {
        return Err(GasError::Config(format!("sample_rate must be in (0, 1], got {}", cfg.sample_rate)));
    }
    let d = x.cols();
    let k = (k * cfg.pool.max(1)).min(n - 1);
    let v = normalized(x);
    let sim = |a: usize, b: usize| dot(&v[a * d..(a + 1) * d], &v[b * d..(b + 1) * d]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut heaps: Vec<Heap> = (0..n).map(|_| Heap { k, items: Vec::with_capacity(k) }).collect();
    for (i, heap) in heaps.iter_mut().enumerate() {
        while heap.items.len() < k {
            let j = rng.random_range(0..n);
            if j != i {
                heap.push(j, sim(i, j));
            }
        }
    }

    let take = ((cfg.sample_rate * k as f64).ceil() as usize).max(1);
    let mut rounds = 0;
    for _ in 0..cfg.iterations {
        rounds += 1;
        let mut new_f: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut old_f: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, heap) in heaps.iter_mut().enumerate() {
            let fresh: Vec<usize> = heap.items.iter().filter(|e| e.fresh).map(|e| e.id).collect();
            new_f[i] = pick(&mut rng, &fresh, take);
            for e in heap.items.iter_mut() {
                if new_f[i].contains(&e.id) {
                    e.fresh = false;
                }
            }
            old_f[i] = heap.items.iter().filter(|e| !e.fresh && !new_f[i].contains(&e.id)).map(|e| e.id).collect();
        }
        let mut new_r: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut old_r: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            for &j in &new_f[i] {
                new_r[j].push(i);
            }
            for &j in &old_f[i] {
                old_r[j].push(i);
            }
        }
        let mut updates = 0usize;
        for i in 0..n {
            let mut new_c = new_f[i].clone();
            let mut old_c = old_f[i].clone();
            for j in pick(&mut rng, &new_r[i], take) {
                if !new_c.contains(&j) {
                    new_c.push(j);
                }
            }
            for j in pick(&mut rng, &old_r[i], take) {
                if !old_c.contains(&j) && !new_c.contains(&j) {
                    old_c.push(j);
                }
            }
            for (p, &a) in new_c.iter().enumerate() {
                for &b in new_c[p + 1..].iter().chain(old_c.iter()) {
                    if a == b {
                        continue;
                    }
                    let s = sim(a, b);
                    updates += heaps[a].push(b, s) as usize;
                    updates += heaps[b].push(a, s) as usize;
                }
            }
        }
        if (updates as f64) < cfg.delta * (n * k) as f64 {
            break;
        }
    }
    let neighbors = heaps
        .into_iter()
        .map(|h| h.items.into_iter().take(cfg.k).map(|e| (e.id, e.sim)).collect())
        .collect();
    Ok(KnnLists { neighbors, rounds })
}

/// Exact K nearest neighbors by scanning every pair; same ordering as
/// [`nn_descent`].
pub fn brute_force_knn(x: &Tensor, k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = x.rows();
    if k == 0 || n <= k {
        return Err(GasError::Config(format!("KNN needs 1 <= K < n, got K={k}, n={n}")));
    }
    let d = x.cols();
    let v = normalized(x);
    Ok((0..n)
        .map(|i| {
            let mut all: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, dot(&v[i * d..(i + 1) * d], &v[j * d..(j + 1) * d])))
                .collect();
            all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            all.truncate(k);
            all
        })
        .collect())
}

/// Fraction of exact neighbors recovered by `approx`.
pub fn knn_recall(approx: &[Vec<(usize, f64)>], exact: &[Vec<(usize, f64)>]) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (a, e) in approx.iter().zip(exact) {
        total += e.len();
        hit += e.iter().filter(|(j, _)| a.iter().any(|(i, _)| i == j)).count();
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}
