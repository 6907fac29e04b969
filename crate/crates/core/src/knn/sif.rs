use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{GasError, Result};
use crate::text::EmbeddingTable;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SifConfig {
    /// Smoothing constant in the word weight `a / (a + p(w))`.
    pub a: f64,
    /// Subtract the projection on the first principal direction.
    pub remove_pc: bool,
}

impl Default for SifConfig {
    fn default() -> Self {
        SifConfig { a: 1e-3, remove_pc: true }
    }
}

/// Unit vector of the leading right singular direction of `x` (rows are
/// samples, no centering). `None` for an all-zero matrix.
pub fn first_principal_direction(x: &Tensor) -> Option<Vec<f64>> {
    let (n, d) = (x.rows(), x.cols());
    let m = DMatrix::from_row_slice(n, d, x.data());
    let gram = m.transpose() * &m;
    let eig = SymmetricEigen::new(gram);
    let (best, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if lambda <= 0.0 {
        return None;
    }
    Some(eig.eigenvectors.column(best).iter().copied().collect())
}

/// Weighted word averages, optionally with the common direction removed.
/// Empty sentences map to the zero vector.
pub fn sif_embed(seqs: &[Vec<usize>], table: &EmbeddingTable, probs: &[f64], cfg: &SifConfig) -> Result<Tensor> {
    if seqs.is_empty() {
        return Err(GasError::Config("cannot embed an empty corpus".into()));
    }
    if !(cfg.a > 0.0) {
        return Err(GasError::Config(format!("SIF constant a must be positive, got {}", cfg.a)));
    }
    let d = table.dim();
    let mut data = vec![0.0; seqs.len() * d];
    for (s, out) in seqs.iter().zip(data.chunks_mut(d.max(1))) {
        if s.is_empty() {
            continue;
        }
        for &w in s {
            let weight = cfg.a / (cfg.a + probs.get(w).copied().unwrap_or(0.0));
            for (o, v) in out.iter_mut().zip(table.vector(w)) {
                *o += weight * v;
            }
        }
        let inv = 1.0 / s.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }
    let mut emb = Tensor::matrix(seqs.len(), d, data)?;
    if cfg.remove_pc {
        if let Some(u) = first_principal_direction(&emb) {
            for row in emb.data_mut().chunks_mut(d) {
                let proj: f64 = row.iter().zip(&u).map(|(a, b)| a * b).sum();
                row.iter_mut().zip(&u).for_each(|(r, ui)| *r -= proj * ui);
            }
        }
    }
    Ok(emb)
}
