//! Define-by-run computation tape with reverse-mode differentiation.
//!
//! A fresh [`Tape`] is built for every mini-batch. Parameters are pushed as
//! the first leaves (so `Var(i)` is parameter `i`), every op appends one node,
//! and [`Tape::backward`] walks the nodes in reverse.

use std::cmp::Ordering;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{GasError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Neighbor slots for the gather-style attention ops: `rows × width` slots,
/// each pointing at a row of some table, with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotIndex {
    pub width: usize,
    pub idx: Vec<usize>,
    pub mask: Vec<bool>,
}

impl SlotIndex {
    pub fn rows(&self) -> usize {
        self.idx.len().checked_div(self.width).unwrap_or(0)
    }

    fn check(&self, table_rows: usize) -> Result<()> {
        if self.idx.len() != self.mask.len() || self.width == 0 || !self.idx.len().is_multiple_of(self.width)
        {
            return Err(GasError::Shape {
                op: "slots",
                left: vec![self.idx.len(), self.width],
                right: vec![self.mask.len()],
            });
        }
        for (&i, &m) in self.idx.iter().zip(&self.mask) {
            if m && i >= table_rows {
                return Err(GasError::Shape {
                    op: "slots",
                    left: vec![i],
                    right: vec![table_rows],
                });
            }
        }
        Ok(())
    }
}

/// One segment of a packed token matrix for [`Tape::seq_conv_maxpool`]:
/// rows `start..start + len` hold the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Gather {
        src: Var,
        idx: Vec<usize>,
    },
    Sum(Var),
    ZeroRows {
        src: Var,
        keep: Vec<bool>,
    },
    SeqConv {
        x: Var,
        filters: Var,
        bias: Var,
        width: usize,
        // window start row per (segment, filter); None when the unit is inactive
        argmax: Vec<Option<usize>>,
    },
    AttnScores {
        q: Var,
        table: Var,
        slots: SlotIndex,
        scale: f64,
    },
    MaskedSoftmax {
        s: Var,
        mask: Vec<bool>,
    },
    WeightedSum {
        w: Var,
        table: Var,
        slots: SlotIndex,
    },
    BceLogits {
        z: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
        denom: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation.
pub struct Tape {
    nodes: Vec<Node>,
    n_params: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not require one.
    pub fn wrt(&self, v: Var) -> Option<Tensor> {
        let shape = self.shapes.get(v.0)?.clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).ok(),
            None => None,
        }
    }

    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }

    /// Gradient for a parameter pushed by [`Tape::with_params`]; parameters
    /// that did not influence the loss receive zeros.
    pub fn param(&self, id: ParamId) -> Vec<f64> {
        let n: usize = self.shapes[id.0].iter().product();
        self.grads[id.0].clone().unwrap_or_else(|| vec![0.0; n])
    }
}

pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents cover every strided access
    // implied by (m, k, n) and the given strides; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Lexicographic total order over two slices.
fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> GasError {
    GasError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            n_params: 0,
        }
    }

    /// Start a tape whose first leaves are the parameters of `store`, in
    /// order, so that `param(id)` is a constant-time lookup.
    pub fn with_params(store: &ParamStore) -> Self {
        let mut tape = Tape::new();
        for t in store.tensors() {
            tape.push(t.clone(), Op::Leaf, true);
        }
        tape.n_params = store.len();
        tape
    }

    pub fn param(&self, id: ParamId) -> Var {
        debug_assert!(id.0 < self.n_params);
        Var(id.0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (n as isize, 1),
            &mut out,
            0.0,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() || ta.cols() != tb.cols() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(t, op, ng)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a bias vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let c = ta.cols();
        if tb.len() != c {
            return Err(shape_err("add_row", ta, tb));
        }
        let b = tb.data();
        let data = ta
            .data()
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(t, Op::AddRow(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    /// `relu(a · w + b)` or `a · w + b`.
    pub fn linear(&mut self, a: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let z = self.matmul(a, w)?;
        match b {
            Some(b) => self.add_row(z, b),
            None => Ok(z),
        }
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat", self.value(parts[0]), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::matrix(rows, total, data)?,
            Op::Concat(parts.to_vec()),
            ng,
        ))
    }

    /// Rows of `src` picked by `idx` (repeats allowed).
    pub fn gather(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(src);
        let (r, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(GasError::Shape {
                    op: "gather",
                    left: vec![i],
                    right: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let ng = self.ng(src);
        Ok(self.push(
            Tensor::matrix(idx.len(), c, data)?,
            Op::Gather {
                src,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Replaces every row whose `keep` flag is false with zeros.
    pub fn zero_rows(&mut self, src: Var, keep: &[bool]) -> Result<Var> {
        let t = self.value(src);
        if keep.len() != t.rows() {
            return Err(GasError::Shape {
                op: "zero_rows",
                left: t.shape().to_vec(),
                right: vec![keep.len()],
            });
        }
        let c = t.cols();
        let mut data = t.data().to_vec();
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                data[r * c..(r + 1) * c].fill(0.0);
            }
        }
        let t = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.ng(src);
        Ok(self.push(
            t,
            Op::ZeroRows {
                src,
                keep: keep.to_vec(),
            },
            ng,
        ))
    }

    /// One filter-width branch of a text CNN over a batch of sequences.
    ///
    /// `x` packs all token vectors (`T × d`), `filters` is `w × d × f` (any
    /// shape whose rows fold to `w·d`), `bias` has `f` entries. For each
    /// segment the output row is `max_p relu(x[p..p+w] · filters + bias)` over
    /// the windows that lie fully inside the segment.
    pub fn seq_conv_maxpool(
        &mut self,
        x: Var,
        filters: Var,
        bias: Var,
        width: usize,
        segments: &[Segment],
    ) -> Result<Var> {
        let (tx, tf, tb) = (self.value(x), self.value(filters), self.value(bias));
        let d = tx.cols();
        let nf = tf.cols();
        if width == 0 || tf.rows() != width * d {
            return Err(shape_err("seq_conv_maxpool", tx, tf));
        }
        if tb.len() != nf {
            return Err(shape_err("seq_conv_maxpool", tf, tb));
        }
        let total = tx.rows();
        for s in segments {
            if s.len < width {
                return Err(GasError::SequenceTooShort {
                    len: s.len,
                    width,
                });
            }
            if s.start + s.len > total {
                return Err(GasError::Shape {
                    op: "seq_conv_maxpool",
                    left: vec![s.start, s.len],
                    right: tx.shape().to_vec(),
                });
            }
        }
        // Overlapping-window product: window p starts at row p, stride d.
        let n_windows = if total >= width { total - width + 1 } else { 0 };
        let mut z = vec![0.0; n_windows * nf];
        gemm(
            n_windows,
            width * d,
            nf,
            tx.data(),
            (d as isize, 1),
            tf.data(),
            (nf as isize, 1),
            &mut z,
            0.0,
        );
        let b = tb.data();
        let mut out = vec![0.0; segments.len() * nf];
        let mut argmax = vec![None; segments.len() * nf];
        for (si, s) in segments.iter().enumerate() {
            let last = s.start + s.len - width;
            for f in 0..nf {
                let mut best = f64::NEG_INFINITY;
                let mut best_p = s.start;
                for p in s.start..=last {
                    let v = z[p * nf + f];
                    if v > best {
                        best = v;
                        best_p = p;
                    }
                }
                let act = best + b[f];
                if act > 0.0 {
                    out[si * nf + f] = act;
                    argmax[si * nf + f] = Some(best_p);
                }
            }
        }
        let ng = self.ng(x) || self.ng(filters) || self.ng(bias);
        Ok(self.push(
            Tensor::matrix(segments.len(), nf, out)?,
            Op::SeqConv {
                x,
                filters,
                bias,
                width,
                argmax,
            },
            ng,
        ))
    }

    /// Scaled dot products between each query row and its slot keys:
    /// `out[n, j] = scale · q[n] · table[idx[n, j]]`, zero on masked slots.
    pub fn attn_scores(&mut self, q: Var, table: Var, slots: &SlotIndex, scale: f64) -> Result<Var> {
        let (tq, tt) = (self.value(q), self.value(table));
        slots.check(tt.rows())?;
        let n = slots.rows();
        if tq.rows() != n || tq.cols() != tt.cols() {
            return Err(shape_err("attn_scores", tq, tt));
        }
        let w = slots.width;
        let mut out = vec![0.0; n * w];
        for r in 0..n {
            let qr = tq.row(r);
            for j in 0..w {
                let s = r * w + j;
                if slots.mask[s] {
                    let kr = tt.row(slots.idx[s]);
                    out[s] = scale * qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let ng = self.ng(q) || self.ng(table);
        Ok(self.push(
            Tensor::matrix(n, w, out)?,
            Op::AttnScores {
                q,
                table,
                slots: slots.clone(),
                scale,
            },
            ng,
        ))
    }

    /// Row-wise softmax over unmasked columns. Masked entries are exactly
    /// zero; a row with no unmasked entry is all zeros.
    pub fn masked_softmax(&mut self, s: Var, mask: &[bool]) -> Result<Var> {
        let ts = self.value(s);
        if mask.len() != ts.len() {
            return Err(GasError::Shape {
                op: "masked_softmax",
                left: ts.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let w = ts.cols();
        let mut out = vec![0.0; ts.len()];
        for (r, row) in ts.data().chunks(w.max(1)).enumerate() {
            softmax_row(row, &mask[r * w..(r + 1) * w], &mut out[r * w..(r + 1) * w]);
        }
        let t = Tensor::new(ts.shape().to_vec(), out)?;
        let ng = self.ng(s);
        Ok(self.push(
            t,
            Op::MaskedSoftmax {
                s,
                mask: mask.to_vec(),
            },
            ng,
        ))
    }

    /// `out[n] = Σ_j w[n, j] · table[idx[n, j]]` over unmasked slots.
    ///
    /// Terms are summed in a canonical order (by weight, then by row
    /// content), so the result is bit-identical under any permutation of a
    /// row's slots.
    pub fn weighted_sum(&mut self, w: Var, table: Var, slots: &SlotIndex) -> Result<Var> {
        let (tw, tt) = (self.value(w), self.value(table));
        slots.check(tt.rows())?;
        let n = slots.rows();
        let width = slots.width;
        if tw.rows() != n || tw.cols() != width {
            return Err(shape_err("weighted_sum", tw, tt));
        }
        let d = tt.cols();
        let mut out = vec![0.0; n * d];
        let mut order: Vec<usize> = Vec::with_capacity(width);
        for r in 0..n {
            canonical_order(r, tw.data(), tt, slots, &mut order);
            let o = &mut out[r * d..(r + 1) * d];
            for &s in &order {
                let wt = tw.data()[s];
                for (acc, v) in o.iter_mut().zip(tt.row(slots.idx[s])) {
                    *acc += wt * v;
                }
            }
        }
        let ng = self.ng(w) || self.ng(table);
        Ok(self.push(
            Tensor::matrix(n, d, out)?,
            Op::WeightedSum {
                w,
                table,
                slots: slots.clone(),
            },
            ng,
        ))
    }

    /// Weighted mean binary cross-entropy on logits `z` (`n × 1`):
    /// `Σ_i w_i · bce(σ(z_i), y_i) / Σ_i w_i`.
    pub fn bce_with_logits(&mut self, z: Var, targets: &[f64], weights: &[f64]) -> Result<Var> {
        let tz = self.value(z);
        if tz.len() != targets.len() || targets.len() != weights.len() {
            return Err(GasError::Shape {
                op: "bce_with_logits",
                left: tz.shape().to_vec(),
                right: vec![targets.len(), weights.len()],
            });
        }
        let denom: f64 = weights.iter().sum();
        if denom <= 0.0 {
            return Err(GasError::Config("loss weights sum to zero".into()));
        }
        let loss: f64 = tz
            .data()
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&z, &y), &w)| w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()))
            .sum::<f64>()
            / denom;
        let ng = self.ng(z);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                z,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                denom,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(GasError::Rank(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.needs_grad || !matches!(n.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.ng(v) {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    // ga += g · bᵀ
                    gemm(m, n, k, g, (n as isize, 1), tb.data(), (1, n as isize), ga, 1.0);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    // gb += aᵀ · g
                    gemm(k, m, n, ta.data(), (1, k as isize), g, (n as isize, 1), gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = self.acc(grads, v) {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::AddRow(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                let c = self.value(*b).len();
                if let Some(gb) = self.acc(grads, *b) {
                    for row in g.chunks(c.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(vb) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(va) {
                        *x += gi * ai;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                }
            }
            Op::Relu(a) => {
                let out = node.value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gi), o) in ga.iter_mut().zip(g).zip(out) {
                        if *o > 0.0 {
                            *x += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let out = node.value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(out) {
                        *x += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Concat(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if let Some(gp) = self.acc(grads, p) {
                        for r in 0..rows {
                            let src = &g[r * total + off..r * total + off + c];
                            gp[r * c..(r + 1) * c]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    off += c;
                }
            }
            Op::Gather { src, idx } => {
                let c = self.value(*src).cols();
                if let Some(gs) = self.acc(grads, *src) {
                    for (r, &i) in idx.iter().enumerate() {
                        gs[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(&g[r * c..(r + 1) * c])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::ZeroRows { src, keep } => {
                let c = self.value(*src).cols();
                if let Some(gs) = self.acc(grads, *src) {
                    for (r, &k) in keep.iter().enumerate() {
                        if k {
                            gs[r * c..(r + 1) * c]
                                .iter_mut()
                                .zip(&g[r * c..(r + 1) * c])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            Op::SeqConv {
                x,
                filters,
                bias,
                width,
                argmax,
            } => self.conv_backward(*x, *filters, *bias, *width, argmax, g, grads),
            Op::AttnScores {
                q,
                table,
                slots,
                scale,
            } => {
                let (tq, tt) = (self.value(*q), self.value(*table));
                let d = tq.cols();
                let w = slots.width;
                if let Some(gq) = self.acc(grads, *q) {
                    for r in 0..slots.rows() {
                        for j in 0..w {
                            let s = r * w + j;
                            if slots.mask[s] && g[s] != 0.0 {
                                let kr = tt.row(slots.idx[s]);
                                let c = scale * g[s];
                                gq[r * d..(r + 1) * d]
                                    .iter_mut()
                                    .zip(kr)
                                    .for_each(|(x, k)| *x += c * k);
                            }
                        }
                    }
                }
                if let Some(gt) = self.acc(grads, *table) {
                    for r in 0..slots.rows() {
                        let qr = tq.row(r);
                        for j in 0..w {
                            let s = r * w + j;
                            if slots.mask[s] && g[s] != 0.0 {
                                let i = slots.idx[s];
                                let c = scale * g[s];
                                gt[i * d..(i + 1) * d]
                                    .iter_mut()
                                    .zip(qr)
                                    .for_each(|(x, q)| *x += c * q);
                            }
                        }
                    }
                }
            }
            Op::MaskedSoftmax { s, mask } => {
                let y = node.value.data();
                let w = node.value.cols();
                if let Some(gs) = self.acc(grads, *s) {
                    for r in 0..node.value.rows() {
                        let range = r * w..(r + 1) * w;
                        let dot: f64 = range
                            .clone()
                            .filter(|&i| mask[i])
                            .map(|i| y[i] * g[i])
                            .sum();
                        for i in range {
                            if mask[i] {
                                gs[i] += y[i] * (g[i] - dot);
                            }
                        }
                    }
                }
            }
            Op::WeightedSum { w, table, slots } => {
                let (tw, tt) = (self.value(*w), self.value(*table));
                let d = tt.cols();
                let width = slots.width;
                if let Some(gw) = self.acc(grads, *w) {
                    for r in 0..slots.rows() {
                        let gr = &g[r * d..(r + 1) * d];
                        for j in 0..width {
                            let s = r * width + j;
                            if slots.mask[s] {
                                gw[s] += gr
                                    .iter()
                                    .zip(tt.row(slots.idx[s]))
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>();
                            }
                        }
                    }
                }
                if let Some(gt) = self.acc(grads, *table) {
                    for r in 0..slots.rows() {
                        let gr = &g[r * d..(r + 1) * d];
                        for j in 0..width {
                            let s = r * width + j;
                            if slots.mask[s] {
                                let i = slots.idx[s];
                                let wt = tw.data()[s];
                                gt[i * d..(i + 1) * d]
                                    .iter_mut()
                                    .zip(gr)
                                    .for_each(|(x, y)| *x += wt * y);
                            }
                        }
                    }
                }
            }
            Op::BceLogits {
                z,
                targets,
                weights,
                denom,
            } => {
                let tz = self.value(*z);
                if let Some(gz) = self.acc(grads, *z) {
                    for (i, x) in gz.iter_mut().enumerate() {
                        let p = sigmoid(tz.data()[i]);
                        *x += g[0] * weights[i] * (p - targets[i]) / denom;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        x: Var,
        filters: Var,
        bias: Var,
        width: usize,
        argmax: &[Option<usize>],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (tx, tf) = (self.value(x), self.value(filters));
        let d = tx.cols();
        let nf = tf.cols();
        let k = width * d;
        if let Some(gb) = self.acc(grads, bias) {
            for (i, a) in argmax.iter().enumerate() {
                if a.is_some() {
                    gb[i % nf] += g[i];
                }
            }
        }
        if self.ng(filters) {
            // Accumulate into a transposed (f × k) buffer for contiguous rows.
            let mut gft = vec![0.0; nf * k];
            for (i, a) in argmax.iter().enumerate() {
                if let Some(p) = a {
                    let f = i % nf;
                    let win = &tx.data()[p * d..p * d + k];
                    gft[f * k..(f + 1) * k]
                        .iter_mut()
                        .zip(win)
                        .for_each(|(acc, v)| *acc += g[i] * v);
                }
            }
            let gf = self.acc(grads, filters).expect("needs grad");
            for f in 0..nf {
                for r in 0..k {
                    gf[r * nf + f] += gft[f * k + r];
                }
            }
        }
        if self.ng(x) {
            let mut ft = vec![0.0; nf * k];
            for r in 0..k {
                for f in 0..nf {
                    ft[f * k + r] = tf.data()[r * nf + f];
                }
            }
            let gx = self.acc(grads, x).expect("needs grad");
            for (i, a) in argmax.iter().enumerate() {
                if let Some(p) = a {
                    let f = i % nf;
                    gx[p * d..p * d + k]
                        .iter_mut()
                        .zip(&ft[f * k..(f + 1) * k])
                        .for_each(|(acc, w)| *acc += g[i] * w);
                }
            }
        }
    }
}

/// Logistic function, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of `scores` restricted to `mask`, written into `out`. Returns
/// false (and writes zeros) when nothing is unmasked.
pub(crate) fn softmax_row(scores: &[f64], mask: &[bool], out: &mut [f64]) -> bool {
    out.fill(0.0);
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut exps: Vec<f64> = Vec::with_capacity(scores.len());
    for ((o, &s), &m) in out.iter_mut().zip(scores).zip(mask) {
        if m {
            *o = (s - max).exp();
            exps.push(*o);
        }
    }
    // sorted summation keeps the normaliser independent of slot order
    exps.sort_by(f64::total_cmp);
    let z: f64 = exps.iter().sum();
    for (o, &m) in out.iter_mut().zip(mask) {
        if m {
            *o /= z;
        }
    }
    true
}

fn canonical_order(r: usize, w: &[f64], table: &Tensor, slots: &SlotIndex, order: &mut Vec<usize>) {
    let width = slots.width;
    order.clear();
    order.extend((r * width..(r + 1) * width).filter(|&s| slots.mask[s]));
    order.sort_by(|&a, &b| {
        w[a].total_cmp(&w[b])
            .then_with(|| cmp_rows(table.row(slots.idx[a]), table.row(slots.idx[b])))
    });
}
