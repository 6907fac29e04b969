//! Time-related neighbor sampling and the layered mini-batch block.

use std::collections::{BTreeSet, HashMap};

use super::bipartite::{BipartiteGraph, NodeRef, Side};
use crate::error::{GasError, Result};

/// The `M` time-closest neighbors of a node: `slots[j]` is an edge id or a
/// placeholder (`None`). Real slots come first and are ordered by time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborSample {
    pub slots: Vec<Option<usize>>,
}

impl NeighborSample {
    pub fn mask(&self) -> Vec<bool> {
        self.slots.iter().map(Option::is_some).collect()
    }

    pub fn edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().flatten().copied()
    }
}

/// Picks the `m` edges of `node` whose timestamps are closest to `anchor`,
/// skipping `exclude`. Ties go to the earlier timestamp, then the smaller
/// comment id. Fewer than `m` candidates are padded with placeholders.
pub fn sample_neighbors_time(
    graph: &BipartiteGraph,
    node: NodeRef,
    anchor: i64,
    m: usize,
    exclude: Option<usize>,
) -> Result<NeighborSample> {
    if m == 0 {
        return Err(GasError::Config("sample size M must be at least 1".into()));
    }
    let adj = graph.adjacency(node)?;
    let mut cand: Vec<usize> = adj.iter().copied().filter(|&e| Some(e) != exclude).collect();
    if cand.len() > m {
        // adjacency is already (timestamp, comment_id) ordered, so a stable
        // sort on distance alone realises the full tie-break
        cand.sort_by_key(|&e| graph.timestamp(e).abs_diff(anchor));
        cand.truncate(m);
        cand.sort_by(|&a, &b| {
            (graph.timestamp(a), &graph.record(a).comment_id)
                .cmp(&(graph.timestamp(b), &graph.record(b).comment_id))
        });
    }
    let mut slots: Vec<Option<usize>> = cand.into_iter().map(Some).collect();
    slots.resize(m, None);
    Ok(NeighborSample { slots })
}

/// Sampling knobs for [`multi_hop_sample`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleConfig {
    pub layers: usize,
    pub m: usize,
    pub exclude_self: bool,
}

/// An edge state at layer `l`. For `l > 0`, `prev` holds the rows of the
/// edge, its user and its item in the layer-`l−1` tables.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EdgeRow {
    pub edge: usize,
    pub prev: Option<[usize; 3]>,
}

/// A user or item state at layer `l`. For `l > 0`, `prev` is the node's own
/// row at layer `l−1` and the `M` slots point at the opposite node and the
/// connecting edge in the layer-`l−1` tables. Masked slots carry arbitrary
/// indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NodeRow {
    pub node: usize,
    pub prev: Option<usize>,
    pub opposite: Vec<usize>,
    pub edges: Vec<usize>,
    pub mask: Vec<bool>,
}

impl NodeRow {
    pub fn real_neighbors(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlockLayer {
    pub edges: Vec<EdgeRow>,
    pub users: Vec<NodeRow>,
    pub items: Vec<NodeRow>,
}

/// Everything one mini-batch needs to run `L` propagation layers.
///
/// `layers[l]` holds the states computed at layer `l`; `outputs[b]` gives
/// the rows of batch edge `b` and its two endpoints in `layers[L]`. Rows are
/// shared whenever two (anchor, node) expansions produce identical inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledBlock {
    pub m: usize,
    pub batch: Vec<usize>,
    pub layers: Vec<BlockLayer>,
    pub outputs: Vec<[usize; 3]>,
}

impl SampledBlock {
    pub fn num_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Distinct user ids present at layer `l` (`U^l`).
    pub fn user_set(&self, l: usize) -> BTreeSet<usize> {
        self.layers[l].users.iter().map(|r| r.node).collect()
    }

    /// Distinct item ids present at layer `l` (`I^l`).
    pub fn item_set(&self, l: usize) -> BTreeSet<usize> {
        self.layers[l].items.iter().map(|r| r.node).collect()
    }

    /// Distinct edge ids present at layer `l`.
    pub fn edge_set(&self, l: usize) -> BTreeSet<usize> {
        self.layers[l].edges.iter().map(|r| r.edge).collect()
    }

    /// Edge ids whose layer-0 state (text encoding) is needed.
    pub fn base_edges(&self) -> Vec<usize> {
        self.layers[0].edges.iter().map(|r| r.edge).collect()
    }
}

#[derive(Default)]
struct Interner {
    edges: HashMap<EdgeRow, usize>,
    users: HashMap<NodeRow, usize>,
    items: HashMap<NodeRow, usize>,
}

struct Builder<'g> {
    graph: &'g BipartiteGraph,
    cfg: SampleConfig,
    layers: Vec<BlockLayer>,
    interners: Vec<Interner>,
    // (kind, id, layer) → row, reset per anchor
    memo: HashMap<(u8, usize, usize), usize>,
}

impl Builder<'_> {
    fn intern_edge(&mut self, l: usize, row: EdgeRow) -> usize {
        let table = &mut self.layers[l].edges;
        *self.interners[l].edges.entry(row.clone()).or_insert_with(|| {
            table.push(row);
            table.len() - 1
        })
    }

    fn intern_node(&mut self, l: usize, side: Side, row: NodeRow) -> usize {
        let (table, map) = match side {
            Side::User => (&mut self.layers[l].users, &mut self.interners[l].users),
            Side::Item => (&mut self.layers[l].items, &mut self.interners[l].items),
        };
        *map.entry(row.clone()).or_insert_with(|| {
            table.push(row);
            table.len() - 1
        })
    }

    fn edge(&mut self, e: usize, l: usize, anchor: i64, exclude: Option<usize>) -> Result<usize> {
        if let Some(&r) = self.memo.get(&(0, e, l)) {
            return Ok(r);
        }
        let prev = if l == 0 {
            None
        } else {
            let pe = self.edge(e, l - 1, anchor, exclude)?;
            let pu = self.node(Side::User, self.graph.edge_user(e), l - 1, anchor, exclude)?;
            let pi = self.node(Side::Item, self.graph.edge_item(e), l - 1, anchor, exclude)?;
            Some([pe, pu, pi])
        };
        let r = self.intern_edge(l, EdgeRow { edge: e, prev });
        self.memo.insert((0, e, l), r);
        Ok(r)
    }

    fn node(&mut self, side: Side, id: usize, l: usize, anchor: i64, exclude: Option<usize>) -> Result<usize> {
        let kind = match side {
            Side::User => 1,
            Side::Item => 2,
        };
        if let Some(&r) = self.memo.get(&(kind, id, l)) {
            return Ok(r);
        }
        let row = if l == 0 {
            NodeRow {
                node: id,
                prev: None,
                opposite: Vec::new(),
                edges: Vec::new(),
                mask: Vec::new(),
            }
        } else {
            let node_ref = match side {
                Side::User => NodeRef::User(id),
                Side::Item => NodeRef::Item(id),
            };
            let prev = self.node(side, id, l - 1, anchor, exclude)?;
            let sample = sample_neighbors_time(self.graph, node_ref, anchor, self.cfg.m, exclude)?;
            let mut opposite = Vec::with_capacity(self.cfg.m);
            let mut edges = Vec::with_capacity(self.cfg.m);
            for slot in &sample.slots {
                match *slot {
                    Some(e) => {
                        let o = match self.graph.opposite(e, side) {
                            NodeRef::User(u) => self.node(Side::User, u, l - 1, anchor, exclude)?,
                            NodeRef::Item(i) => self.node(Side::Item, i, l - 1, anchor, exclude)?,
                        };
                        opposite.push(o);
                        edges.push(self.edge(e, l - 1, anchor, exclude)?);
                    }
                    None => {
                        opposite.push(0);
                        edges.push(0);
                    }
                }
            }
            NodeRow {
                node: id,
                prev: Some(prev),
                opposite,
                edges,
                mask: sample.mask(),
            }
        };
        let r = self.intern_node(l, side, row);
        self.memo.insert((kind, id, l), r);
        Ok(r)
    }
}

/// Builds the sampled block for `batch` with `cfg.layers` propagation
/// layers. Each batch edge expands its own tree anchored at its timestamp;
/// with `exclude_self`, the batch edge never appears among sampled
/// neighbors inside its own tree.
pub fn multi_hop_sample(graph: &BipartiteGraph, batch: &[usize], cfg: SampleConfig) -> Result<SampledBlock> {
    if batch.is_empty() {
        return Err(GasError::Config("empty batch".into()));
    }
    if cfg.m == 0 {
        return Err(GasError::Config("sample size M must be at least 1".into()));
    }
    let mut b = Builder {
        graph,
        cfg,
        layers: vec![BlockLayer::default(); cfg.layers + 1],
        interners: (0..=cfg.layers).map(|_| Interner::default()).collect(),
        memo: HashMap::new(),
    };
    let mut outputs = Vec::with_capacity(batch.len());
    for &e in batch {
        if e >= graph.num_edges() {
            return Err(GasError::Lookup {
                kind: "edge",
                id: e.to_string(),
            });
        }
        b.memo.clear();
        let anchor = graph.timestamp(e);
        let exclude = cfg.exclude_self.then_some(e);
        let l = cfg.layers;
        let re = b.edge(e, l, anchor, exclude)?;
        let ru = b.node(Side::User, graph.edge_user(e), l, anchor, exclude)?;
        let ri = b.node(Side::Item, graph.edge_item(e), l, anchor, exclude)?;
        outputs.push([re, ru, ri]);
    }
    Ok(SampledBlock {
        m: cfg.m,
        batch: batch.to_vec(),
        layers: b.layers,
        outputs,
    })
}
