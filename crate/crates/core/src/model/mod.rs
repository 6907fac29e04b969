//! The full classifier: text encoder, heterogeneous propagation, the comment
//! graph branch and an MLP head, with training, prediction and checkpoints.

mod checkpoint;
mod train;

use std::collections::HashMap;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, CHECKPOINT_VERSION};
pub use train::{predict_batch, split_labeled, train, EpochRecord, Split, TrainConfig, TrainOutcome};

use crate::autodiff::{ParamId, ParamStore, SlotIndex, Tape, Tensor, Var};
use crate::error::{GasError, Result};
use crate::gcn::{forward as gcn_forward, BaseStates, HeteroDims, HeteroGcnParams};
use crate::graph::{multi_hop_sample, BipartiteGraph, CommentGraph, SampleConfig};
use crate::init::{glorot, uniform};
use crate::text::{map_tokens, EmbeddingTable, TextCnnParams, Vocabulary, DEFAULT_FILTERS, DEFAULT_WIDTHS, PAD};

/// Which branches feed the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Text encoding plus the raw endpoint states.
    Baseline,
    /// Propagation over the user–item–comment graph only.
    GasLocal,
    /// Propagation plus the comment graph branch.
    Gas,
}

impl FromStr for Variant {
    type Err = GasError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "gas-local" | "gas_local" => Ok(Variant::GasLocal),
            "gas" => Ok(Variant::Gas),
            _ => Err(GasError::Config(format!("unknown variant `{s}` (baseline, gas-local, gas)"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::GasLocal => "gas-local",
            Variant::Gas => "gas",
        })
    }
}

/// Storage precision of parameters. Arithmetic always runs in f64; with
/// `F32` every parameter is rounded to f32 after initialisation and after
/// each update, and checkpoints store 4-byte floats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = GasError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(GasError::Config(format!("unknown precision `{s}` (f32, f64)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Propagation layers on the user–item–comment graph.
    pub layers: usize,
    /// Hidden size of every propagation layer (also the attention size).
    pub hidden: usize,
    pub classifier_hidden: usize,
    /// Size of free node embeddings when no node features are given.
    pub node_dim: usize,
    pub filter_widths: Vec<usize>,
    pub filters: usize,
    /// Word vector size used when no embedding file is given.
    pub word_dim: usize,
    pub max_tokens: usize,
    /// Sampled neighbors per user/item.
    pub m_xianyu: usize,
    /// Comment graph neighbors per comment.
    pub m_comment: usize,
    pub exclude_self: bool,
    pub freeze_word_embeddings: bool,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Gas,
            layers: 2,
            hidden: 64,
            classifier_hidden: 64,
            node_dim: 16,
            filter_widths: DEFAULT_WIDTHS.to_vec(),
            filters: DEFAULT_FILTERS,
            word_dim: 64,
            max_tokens: 64,
            m_xianyu: 16,
            m_comment: 64,
            exclude_self: true,
            freeze_word_embeddings: false,
            precision: Precision::F64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GasError::Config(m.to_string()));
        if self.variant != Variant::Baseline && self.layers == 0 {
            return bad("graph variants need at least one propagation layer");
        }
        if self.hidden == 0 || self.classifier_hidden == 0 || self.filters == 0 || self.node_dim == 0 {
            return bad("hidden sizes, node_dim and filters must be positive");
        }
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return bad("filter widths must be positive");
        }
        if self.m_xianyu == 0 || self.m_comment == 0 {
            return bad("sample sizes must be positive");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }
}

/// The graphs a model runs on.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: BipartiteGraph,
    /// Comment graph neighbors of each edge, best first.
    pub comment_neighbors: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(graph: BipartiteGraph, comment_graph: Option<&CommentGraph>) -> Result<Self> {
        let comment_neighbors = match comment_graph {
            Some(cg) => cg
                .align(&graph)?
                .into_iter()
                .map(|l| l.into_iter().map(|(e, _)| e).collect())
                .collect(),
            None => vec![Vec::new(); graph.num_edges()],
        };
        Ok(Dataset {
            graph,
            comment_neighbors,
        })
    }
}

/// How layer-0 user or item states are produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeInput {
    /// Ingested feature vectors of this size.
    Features { dim: usize },
    /// A learned row per known node id; unknown nodes get zeros.
    Free { ids: Vec<String> },
}

/// Mean-aggregating layer over comment graph neighbors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommentBranch {
    pub v: ParamId,
    pub w: ParamId,
    pub b: ParamId,
}

/// Two-layer MLP; the first layer has one weight block per input part so
/// that parts can be switched off exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classifier {
    pub parts: Vec<(String, ParamId)>,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub seed: u64,
    pub vocab: Vec<String>,
    pub users: NodeInput,
    pub items: NodeInput,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub meta: ModelMeta,
    pub store: ParamStore,
    vocab: Vocabulary,
    pub words: ParamId,
    pub text: TextCnnParams,
    pub user_table: Option<ParamId>,
    pub item_table: Option<ParamId>,
    pub gcn: HeteroGcnParams,
    pub comment: Option<CommentBranch>,
    pub classifier: Classifier,
}

fn node_input(features: Option<&Tensor>, ids: impl Iterator<Item = String>) -> NodeInput {
    match features {
        Some(f) => NodeInput::Features { dim: f.cols() },
        None => NodeInput::Free { ids: ids.collect() },
    }
}

impl Model {
    /// Fresh parameters for `graph` with the given vocabulary and initial
    /// word vectors.
    pub fn init(
        config: ModelConfig,
        graph: &BipartiteGraph,
        vocab: &Vocabulary,
        words: &EmbeddingTable,
        seed: u64,
    ) -> Result<Self> {
        let mut config = config;
        config.word_dim = words.dim();
        let meta = ModelMeta {
            config,
            seed,
            vocab: vocab.tokens().to_vec(),
            users: node_input(graph.user_features(), (0..graph.num_users()).map(|u| graph.user_id(u).to_string())),
            items: node_input(graph.item_features(), (0..graph.num_items()).map(|i| graph.item_id(i).to_string())),
        };
        let mut model = Self::layout(meta)?;
        let mut w = words.matrix.clone();
        w.data_mut()[..words.dim()].fill(0.0);
        model.store.set(model.words, w)?;
        model.round_to_precision();
        Ok(model)
    }

    /// Allocates and initialises every parameter from `meta`.
    pub(crate) fn layout(meta: ModelMeta) -> Result<Self> {
        let cfg = &meta.config;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
        let mut store = ParamStore::new();
        let mut vocab = Vocabulary::new();
        for t in &meta.vocab {
            vocab.insert(t);
        }
        if vocab.len() != meta.vocab.len() {
            return Err(GasError::Incompatible(format!(
                "vocabulary must start with the reserved tokens; got {} entries, {} distinct",
                meta.vocab.len(),
                vocab.len()
            )));
        }
        let words = store.add("words", Tensor::zeros(&[vocab.len(), cfg.word_dim]));
        let text = TextCnnParams::init(&mut store, &mut rng, cfg.word_dim, &cfg.filter_widths, cfg.filters);
        let mut free = |name: &str, input: &NodeInput, store: &mut ParamStore| match input {
            NodeInput::Features { .. } => None,
            NodeInput::Free { ids } => Some(store.add(name, uniform(&mut rng, &[ids.len(), cfg.node_dim], 0.1))),
        };
        let user_table = free("nodes.user", &meta.users, &mut store);
        let item_table = free("nodes.item", &meta.items, &mut store);
        let dim_of = |input: &NodeInput| match input {
            NodeInput::Features { dim } => *dim,
            NodeInput::Free { .. } => cfg.node_dim,
        };
        let input = HeteroDims {
            edge: text.output_dim(),
            user: dim_of(&meta.users),
            item: dim_of(&meta.items),
        };
        let hidden = match cfg.variant {
            Variant::Baseline => Vec::new(),
            _ => vec![cfg.hidden; cfg.layers],
        };
        let gcn = HeteroGcnParams::init(&mut store, &mut rng, input, &hidden);
        let comment = (cfg.variant == Variant::Gas).then(|| CommentBranch {
            v: store.add("comment.v", glorot(&mut rng, input.edge, cfg.hidden)),
            w: store.add("comment.w", glorot(&mut rng, input.edge, cfg.hidden)),
            b: store.add("comment.b", Tensor::zeros(&[cfg.hidden])),
        });
        let out = gcn.output_dims();
        let mut part_dims = vec![("z_i", out.item), ("z_u", out.user), ("z_e", out.edge)];
        if comment.is_some() {
            part_dims.push(("p_e", 2 * cfg.hidden));
        }
        let total: usize = part_dims.iter().map(|p| p.1).sum();
        // one Glorot draw for the whole first layer, split into row blocks
        let w1 = glorot(&mut rng, total, cfg.classifier_hidden);
        let mut parts = Vec::new();
        let mut row = 0;
        for (name, d) in part_dims {
            let block = w1.data()[row * cfg.classifier_hidden..(row + d) * cfg.classifier_hidden].to_vec();
            let id = store.add(format!("classifier.w1.{name}"), Tensor::matrix(d, cfg.classifier_hidden, block)?);
            parts.push((name.to_string(), id));
            row += d;
        }
        let classifier = Classifier {
            parts,
            b1: store.add("classifier.b1", Tensor::zeros(&[cfg.classifier_hidden])),
            w2: store.add("classifier.w2", glorot(&mut rng, cfg.classifier_hidden, 1)),
            b2: store.add("classifier.b2", Tensor::zeros(&[1])),
        };
        Ok(Model {
            meta,
            store,
            vocab,
            words,
            text,
            user_table,
            item_table,
            gcn,
            comment,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.meta.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub(crate) fn round_to_precision(&mut self) {
        if self.meta.config.precision == Precision::F32 {
            for id in self.store.ids().collect::<Vec<_>>() {
                self.store
                    .get_mut(id)
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = *v as f32 as f64);
            }
        }
    }

    /// Resolves token ids and node rows of `data` against this model.
    pub fn bind<'a>(&self, data: &'a Dataset) -> Result<Bound<'a>> {
        let g = &data.graph;
        let tokens = g.records().iter().map(|r| map_tokens(&r.tokens, &self.vocab)).collect();
        let rows = |input: &NodeInput, n: usize, feats: Option<&Tensor>, name: &dyn Fn(usize) -> String, kind: &str| {
            match input {
                NodeInput::Features { dim } => match feats {
                    Some(f) if f.cols() == *dim => Ok((0..n).map(Some).collect()),
                    Some(f) => Err(GasError::Incompatible(format!(
                        "{kind} features have dimension {} but the model expects {dim}",
                        f.cols()
                    ))),
                    None => Err(GasError::Incompatible(format!("model expects {kind} features of dimension {dim}"))),
                },
                NodeInput::Free { ids } => {
                    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
                    Ok((0..n).map(|k| index.get(name(k).as_str()).copied()).collect())
                }
            }
        };
        let user_rows = rows(&self.meta.users, g.num_users(), g.user_features(), &|u| g.user_id(u).to_string(), "user")?;
        let item_rows = rows(&self.meta.items, g.num_items(), g.item_features(), &|i| g.item_id(i).to_string(), "item")?;
        Ok(Bound {
            data,
            tokens,
            user_rows,
            item_rows,
        })
    }

    /// Layer-0 states of the listed nodes.
    fn node_states(&self, tape: &mut Tape, bound: &Bound, user: bool, nodes: &[usize]) -> Result<Var> {
        let g = &bound.data.graph;
        let (param, rows, feats) = if user {
            (self.user_table, &bound.user_rows, g.user_features())
        } else {
            (self.item_table, &bound.item_rows, g.item_features())
        };
        let table = match (param, feats) {
            (Some(p), _) => tape.param(p),
            (None, Some(f)) => tape.constant(f.clone()),
            (None, None) => return Err(GasError::Config("node input has neither features nor embeddings".into())),
        };
        let idx: Vec<usize> = nodes.iter().map(|&n| rows[n].unwrap_or(0)).collect();
        let known: Vec<bool> = nodes.iter().map(|&n| rows[n].is_some()).collect();
        let x = tape.gather(table, &idx)?;
        if known.iter().all(|&k| k) {
            Ok(x)
        } else {
            tape.zero_rows(x, &known)
        }
    }

    /// Classifier logits (`batch × 1`) for the edges in `batch`.
    pub fn logits(&self, tape: &mut Tape, bound: &Bound, batch: &[usize]) -> Result<Var> {
        if batch.is_empty() {
            return Err(GasError::Config("empty batch".into()));
        }
        let cfg = &self.meta.config;
        let g = &bound.data.graph;
        let block = match cfg.variant {
            Variant::Baseline => None,
            _ => Some(multi_hop_sample(
                g,
                batch,
                SampleConfig {
                    layers: cfg.layers,
                    m: cfg.m_xianyu,
                    exclude_self: cfg.exclude_self,
                },
            )?),
        };

        // every comment whose text encoding is needed, each encoded once
        let mut text_rows: HashMap<usize, usize> = HashMap::new();
        let mut text_edges: Vec<usize> = Vec::new();
        let mut need = |e: usize| {
            *text_rows.entry(e).or_insert_with(|| {
                text_edges.push(e);
                text_edges.len() - 1
            })
        };
        let batch_rows: Vec<usize> = batch.iter().map(|&e| need(e)).collect();
        let base_rows: Vec<usize> = block
            .as_ref()
            .map(|b| b.base_edges().into_iter().map(&mut need).collect())
            .unwrap_or_default();
        let neighbor_rows: Vec<Vec<usize>> = if self.comment.is_some() {
            batch
                .iter()
                .map(|&e| {
                    let list = &bound.data.comment_neighbors[e];
                    list[..list.len().min(cfg.m_comment)].iter().map(|&n| need(n)).collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        let seqs: Vec<&[usize]> = text_edges.iter().map(|&e| bound.tokens[e].as_slice()).collect();
        let words = tape.param(self.words);
        let text = self.text.encode(tape, words, &seqs, cfg.max_tokens)?;

        let mut parts = Vec::new();
        match &block {
            None => {
                let users: Vec<usize> = batch.iter().map(|&e| g.edge_user(e)).collect();
                let items: Vec<usize> = batch.iter().map(|&e| g.edge_item(e)).collect();
                // baseline reuses the z slots: item state, user state, text
                parts.push(self.node_states(tape, bound, false, &items)?);
                parts.push(self.node_states(tape, bound, true, &users)?);
                parts.push(tape.gather(text, &batch_rows)?);
            }
            Some(block) => {
                let users: Vec<usize> = block.layers[0].users.iter().map(|r| r.node).collect();
                let items: Vec<usize> = block.layers[0].items.iter().map(|r| r.node).collect();
                let base = BaseStates {
                    edges: tape.gather(text, &base_rows)?,
                    users: self.node_states(tape, bound, true, &users)?,
                    items: self.node_states(tape, bound, false, &items)?,
                };
                let z = gcn_forward(tape, block, &self.gcn, base)?;
                parts.extend([z.z_i, z.z_u, z.z_e]);
            }
        }
        if let Some(branch) = &self.comment {
            let h0 = tape.gather(text, &batch_rows)?;
            parts.push(self.comment_encode(tape, branch, text, h0, &neighbor_rows)?);
        }
        self.classify(tape, &parts)
    }

    /// `concat(h0 · V, relu(mean(neighbors) · W + b))`, the neighbor term
    /// being zero for isolated comments.
    fn comment_encode(
        &self,
        tape: &mut Tape,
        branch: &CommentBranch,
        table: Var,
        h0: Var,
        neighbors: &[Vec<usize>],
    ) -> Result<Var> {
        let width = neighbors.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut idx = Vec::with_capacity(neighbors.len() * width);
        let mut mask = Vec::with_capacity(neighbors.len() * width);
        let mut weights = Vec::with_capacity(neighbors.len() * width);
        for list in neighbors {
            let k = list.len();
            for j in 0..width {
                idx.push(list.get(j).copied().unwrap_or(0));
                mask.push(j < k);
                weights.push(if j < k { 1.0 / k as f64 } else { 0.0 });
            }
        }
        let has: Vec<bool> = neighbors.iter().map(|l| !l.is_empty()).collect();
        let w = tape.constant(Tensor::matrix(neighbors.len(), width, weights)?);
        let mean = tape.weighted_sum(w, table, &SlotIndex { width, idx, mask })?;
        let (wc, bc, vc) = (tape.param(branch.w), tape.param(branch.b), tape.param(branch.v));
        let z = tape.linear(mean, wc, Some(bc))?;
        let agg = tape.relu(z);
        let agg = tape.zero_rows(agg, &has)?;
        let own = tape.matmul(h0, vc)?;
        tape.concat(&[own, agg])
    }

    /// `relu(Σ_k part_k · W1_k + b1) · W2 + b2`.
    pub fn classify(&self, tape: &mut Tape, parts: &[Var]) -> Result<Var> {
        let c = &self.classifier;
        if parts.len() != c.parts.len() {
            return Err(GasError::Config(format!(
                "classifier expects {} inputs, got {}",
                c.parts.len(),
                parts.len()
            )));
        }
        let mut acc: Option<Var> = None;
        for (&x, (_, w)) in parts.iter().zip(&c.parts) {
            let w = tape.param(*w);
            let y = tape.matmul(x, w)?;
            acc = Some(match acc {
                None => y,
                Some(a) => tape.add(a, y)?,
            });
        }
        let b1 = tape.param(c.b1);
        let h = tape.add_row(acc.expect("at least one part"), b1)?;
        let h = tape.relu(h);
        let (w2, b2) = (tape.param(c.w2), tape.param(c.b2));
        tape.linear(h, w2, Some(b2))
    }

    /// Gradient vector for the optimizer: frozen word vectors are skipped and
    /// the PAD row never moves.
    pub(crate) fn grads_for_update(&self, grads: &crate::autodiff::Gradients) -> Vec<Option<Vec<f64>>> {
        let d = self.meta.config.word_dim;
        self.store
            .ids()
            .map(|id| {
                if id == self.words {
                    if self.meta.config.freeze_word_embeddings {
                        return None;
                    }
                    let mut g = grads.param(id);
                    g[PAD * d..(PAD + 1) * d].fill(0.0);
                    return Some(g);
                }
                Some(grads.param(id))
            })
            .collect()
    }
}

/// A dataset resolved against one model's vocabulary and node tables.
pub struct Bound<'a> {
    pub data: &'a Dataset,
    pub tokens: Vec<Vec<usize>>,
    pub user_rows: Vec<Option<usize>>,
    pub item_rows: Vec<Option<usize>>,
}

#[cfg(test)]
mod tests;
