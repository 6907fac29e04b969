//! Heterogeneous graph convolution over the user–item–comment graph: edge
//! updates from the comment and its endpoints, attention aggregation over
//! time-sampled neighbors, self/neighbor combination, and the meta-path form
//! of the same layer.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, SlotIndex, Tape, Tensor, Var};
use crate::error::{GasError, Result};
use crate::graph::{NodeRow, SampledBlock};
use crate::init::glorot;

/// Attention and aggregation weights for one node type at one layer.
///
/// The query `Q` projects the node's own state; the key is split into `K_opp`
/// and `K_edge` so that `K · concat(h_opp, h_edge)` can be computed on whole
/// tables before gathering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregateParams {
    pub q: ParamId,
    pub k_opp: ParamId,
    pub k_edge: ParamId,
    pub w: ParamId,
    pub b: ParamId,
}

impl AggregateParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        self_dim: usize,
        opp_dim: usize,
        edge_dim: usize,
        att_dim: usize,
        out_dim: usize,
    ) -> Self {
        AggregateParams {
            q: store.add(format!("{prefix}.q"), glorot(rng, self_dim, att_dim)),
            k_opp: store.add(format!("{prefix}.k_opp"), glorot(rng, opp_dim, att_dim)),
            k_edge: store.add(format!("{prefix}.k_edge"), glorot(rng, edge_dim, att_dim)),
            w: store.add(format!("{prefix}.w"), glorot(rng, opp_dim + edge_dim, out_dim)),
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[out_dim])),
        }
    }
}

/// Hidden sizes of the edge, user and item states at one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeteroDims {
    pub edge: usize,
    pub user: usize,
    pub item: usize,
}

impl HeteroDims {
    /// Sizes after a layer with hidden size `d`: nodes concatenate the
    /// projected self state with the neighborhood embedding.
    pub fn after(d: usize) -> Self {
        HeteroDims {
            edge: d,
            user: 2 * d,
            item: 2 * d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeteroLayerParams {
    pub dim: usize,
    pub w_e: ParamId,
    pub b_e: ParamId,
    /// Users aggregate items and comments.
    pub user: AggregateParams,
    /// Items aggregate users and comments.
    pub item: AggregateParams,
    pub v_u: ParamId,
    pub v_i: ParamId,
}

impl HeteroLayerParams {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, l: usize, input: HeteroDims, dim: usize) -> Self {
        let p = format!("gcn.l{l}");
        let w_e = store.add(format!("{p}.edge.w"), glorot(rng, input.edge + input.user + input.item, dim));
        let b_e = store.add(format!("{p}.edge.b"), Tensor::zeros(&[dim]));
        let user = AggregateParams::init(store, rng, &format!("{p}.user"), input.user, input.item, input.edge, dim, dim);
        let item = AggregateParams::init(store, rng, &format!("{p}.item"), input.item, input.user, input.edge, dim, dim);
        let v_u = store.add(format!("{p}.user.v"), glorot(rng, input.user, dim));
        let v_i = store.add(format!("{p}.item.v"), glorot(rng, input.item, dim));
        HeteroLayerParams {
            dim,
            w_e,
            b_e,
            user,
            item,
            v_u,
            v_i,
        }
    }
}

/// All propagation layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeteroGcnParams {
    pub input: HeteroDims,
    pub layers: Vec<HeteroLayerParams>,
}

impl HeteroGcnParams {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, input: HeteroDims, hidden: &[usize]) -> Self {
        let mut dims = input;
        let mut layers = Vec::with_capacity(hidden.len());
        for (l, &d) in hidden.iter().enumerate() {
            layers.push(HeteroLayerParams::init(store, rng, l + 1, dims, d));
            dims = HeteroDims::after(d);
        }
        HeteroGcnParams { input, layers }
    }

    pub fn output_dims(&self) -> HeteroDims {
        self.layers.last().map_or(self.input, |p| HeteroDims::after(p.dim))
    }
}

/// `relu(concat(h_e, h_u, h_i) · W_E + b)`; the three inputs are row-aligned.
pub fn edge_update(tape: &mut Tape, h_e: Var, h_u: Var, h_i: Var, w_e: ParamId, b_e: ParamId) -> Result<Var> {
    let x = tape.concat(&[h_e, h_u, h_i])?;
    let (w, b) = (tape.param(w_e), tape.param(b_e));
    let z = tape.linear(x, w, Some(b))?;
    Ok(tape.relu(z))
}

/// Slot layout of a set of node rows: which opposite-node row and which edge
/// row each of the `width` slots points at.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSlots {
    pub opposite: SlotIndex,
    pub edges: SlotIndex,
}

impl NeighborSlots {
    pub fn from_rows(rows: &[NodeRow], width: usize) -> Self {
        let mut opp = Vec::with_capacity(rows.len() * width);
        let mut edges = Vec::with_capacity(rows.len() * width);
        let mut mask = Vec::with_capacity(rows.len() * width);
        for r in rows {
            opp.extend_from_slice(&r.opposite);
            edges.extend_from_slice(&r.edges);
            mask.extend_from_slice(&r.mask);
        }
        NeighborSlots {
            opposite: SlotIndex {
                width,
                idx: opp,
                mask: mask.clone(),
            },
            edges: SlotIndex { width, idx: edges, mask },
        }
    }

    pub fn mask(&self) -> &[bool] {
        &self.opposite.mask
    }

    pub fn has_neighbor(&self) -> Vec<bool> {
        self.mask()
            .chunks(self.opposite.width.max(1))
            .map(|c| c.iter().any(|&m| m))
            .collect()
    }
}

/// Scaled dot-product attention of each `h_self` row over its candidates
/// `concat(opp_table[j], edge_table[j])`. Returns the weights (`rows × width`)
/// and the weighted candidate sums. Rows without any real candidate yield
/// zero weights and a zero sum.
fn attend(
    tape: &mut Tape,
    h_self: Var,
    opp_table: Var,
    edge_table: Var,
    slots: &NeighborSlots,
    p: &AggregateParams,
) -> Result<(Var, Var)> {
    let (q, ko, ke) = (tape.param(p.q), tape.param(p.k_opp), tape.param(p.k_edge));
    let att_dim = tape.value(q).cols();
    let scale = 1.0 / (att_dim as f64).sqrt();
    let query = tape.matmul(h_self, q)?;
    let keys_opp = tape.matmul(opp_table, ko)?;
    let keys_edge = tape.matmul(edge_table, ke)?;
    let s_opp = tape.attn_scores(query, keys_opp, &slots.opposite, scale)?;
    let s_edge = tape.attn_scores(query, keys_edge, &slots.edges, scale)?;
    let scores = tape.add(s_opp, s_edge)?;
    let weights = tape.masked_softmax(scores, slots.mask())?;
    let agg_opp = tape.weighted_sum(weights, opp_table, &slots.opposite)?;
    let agg_edge = tape.weighted_sum(weights, edge_table, &slots.edges)?;
    let agg = tape.concat(&[agg_opp, agg_edge])?;
    Ok((weights, agg))
}

/// Attention aggregation for rows that each have at least one real
/// candidate; an all-placeholder row is an error here.
pub fn attention_aggregate(
    tape: &mut Tape,
    h_self: Var,
    opp_table: Var,
    edge_table: Var,
    slots: &NeighborSlots,
    p: &AggregateParams,
) -> Result<(Var, Var)> {
    if slots.has_neighbor().iter().any(|&h| !h) {
        return Err(GasError::EmptyNeighborhood);
    }
    attend(tape, h_self, opp_table, edge_table, slots, p)
}

/// `concat(h_self · V, h_N)` with `h_N = relu(W · ATTN + b)`, or zero when
/// a row has no real neighbor. `self_rows[r]` indexes `self_table`.
#[allow(clippy::too_many_arguments)]
pub fn node_update(
    tape: &mut Tape,
    self_table: Var,
    self_rows: &[usize],
    opp_table: Var,
    edge_table: Var,
    slots: &NeighborSlots,
    p: &AggregateParams,
    v: ParamId,
) -> Result<Var> {
    let h_self = tape.gather(self_table, self_rows)?;
    let (_, agg) = attend(tape, h_self, opp_table, edge_table, slots, p)?;
    let (w, b) = (tape.param(p.w), tape.param(p.b));
    let z = tape.linear(agg, w, Some(b))?;
    let h_n = tape.relu(z);
    let h_n = tape.zero_rows(h_n, &slots.has_neighbor())?;
    let v = tape.param(v);
    let own = tape.matmul(h_self, v)?;
    tape.concat(&[own, h_n])
}

fn node_rows_update(
    tape: &mut Tape,
    self_table: Var,
    opp_table: Var,
    edge_table: Var,
    rows: &[NodeRow],
    width: usize,
    p: &AggregateParams,
    v: ParamId,
) -> Result<Var> {
    let self_rows: Vec<usize> = rows.iter().map(|r| r.prev.unwrap_or(0)).collect();
    let slots = NeighborSlots::from_rows(rows, width);
    node_update(tape, self_table, &self_rows, opp_table, edge_table, &slots, p, v)
}

/// Layer-0 states, row-aligned with `block.layers[0]`.
#[derive(Clone, Copy, Debug)]
pub struct BaseStates {
    pub edges: Var,
    pub users: Var,
    pub items: Var,
}

/// Final-layer states of each batch edge and its endpoints.
#[derive(Clone, Copy, Debug)]
pub struct GcnOutputs {
    pub z_e: Var,
    pub z_u: Var,
    pub z_i: Var,
}

/// Runs every propagation layer over a sampled block: per layer, the edge
/// update and then the user and item updates, all reading layer `l−1`.
pub fn forward(tape: &mut Tape, block: &SampledBlock, params: &HeteroGcnParams, base: BaseStates) -> Result<GcnOutputs> {
    if block.num_layers() != params.layers.len() {
        return Err(GasError::Config(format!(
            "block has {} layers but the model has {}",
            block.num_layers(),
            params.layers.len()
        )));
    }
    let (mut e, mut u, mut i) = (base.edges, base.users, base.items);
    for (l, p) in params.layers.iter().enumerate() {
        let layer = &block.layers[l + 1];
        let prev = |k: usize| -> Vec<usize> { layer.edges.iter().map(|r| r.prev.map_or(0, |p| p[k])).collect() };
        let he = tape.gather(e, &prev(0))?;
        let hu = tape.gather(u, &prev(1))?;
        let hi = tape.gather(i, &prev(2))?;
        let e_next = edge_update(tape, he, hu, hi, p.w_e, p.b_e)?;
        let u_next = node_rows_update(tape, u, i, e, &layer.users, block.m, &p.user, p.v_u)?;
        let i_next = node_rows_update(tape, i, u, e, &layer.items, block.m, &p.item, p.v_i)?;
        (e, u, i) = (e_next, u_next, i_next);
    }
    let pick = |k: usize| -> Vec<usize> { block.outputs.iter().map(|o| o[k]).collect() };
    Ok(GcnOutputs {
        z_e: tape.gather(e, &pick(0))?,
        z_u: tape.gather(u, &pick(1))?,
        z_i: tape.gather(i, &pick(2))?,
    })
}

/// One hop of a meta-path: nodes of type `target` aggregate neighbors of
/// type `source` reached through edges of type `relation`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct MetaPathStep {
    pub source: String,
    pub relation: String,
    pub target: String,
}

/// A node/edge type sequence `A0 R0 A1 R1 … A_L`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaPathSchema {
    pub nodes: Vec<String>,
    pub relations: Vec<String>,
}

impl MetaPathSchema {
    /// Parses `"U-E-I-E-U"`: node and relation types alternate.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').map(str::trim).collect();
        if parts.len() < 3 || parts.len().is_multiple_of(2) || parts.iter().any(|p| p.is_empty()) {
            return Err(GasError::Config(format!("malformed meta-path `{s}`")));
        }
        Ok(MetaPathSchema {
            nodes: parts.iter().step_by(2).map(|p| p.to_string()).collect(),
            relations: parts.iter().skip(1).step_by(2).map(|p| p.to_string()).collect(),
        })
    }

    pub fn steps(&self) -> Vec<MetaPathStep> {
        (0..self.relations.len())
            .map(|l| MetaPathStep {
                source: self.nodes[l].clone(),
                relation: self.relations[l].clone(),
                target: self.nodes[l + 1].clone(),
            })
            .collect()
    }
}

/// Parameters indexed by type: one aggregator per meta-path step and one
/// combination matrix per target node type.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TypedParams {
    pub aggregators: BTreeMap<MetaPathStep, AggregateParams>,
    pub combiners: BTreeMap<String, ParamId>,
}

impl TypedParams {
    /// The two steps of a bipartite layer: `I-E-U` updates users and
    /// `U-E-I` updates items.
    pub fn bipartite(layer: &HeteroLayerParams) -> Self {
        let step = |s: &str, t: &str| MetaPathStep {
            source: s.into(),
            relation: "E".into(),
            target: t.into(),
        };
        let mut p = TypedParams::default();
        p.aggregators.insert(step("I", "U"), layer.user.clone());
        p.aggregators.insert(step("U", "I"), layer.item.clone());
        p.combiners.insert("U".into(), layer.v_u);
        p.combiners.insert("I".into(), layer.v_i);
        p
    }
}

/// A state table tagged with the type of its rows.
#[derive(Clone, Copy, Debug)]
pub struct TypedTable<'a> {
    pub ty: &'a str,
    pub var: Var,
}

/// The node update of one meta-path step. Table types must match the step
/// and the step must have parameters.
pub fn metapath_layer(
    tape: &mut Tape,
    step: &MetaPathStep,
    params: &TypedParams,
    target: TypedTable,
    source: TypedTable,
    relation: TypedTable,
    rows: &[NodeRow],
    width: usize,
) -> Result<Var> {
    for (want, got) in [(&step.target, target.ty), (&step.source, source.ty), (&step.relation, relation.ty)] {
        if want != got {
            return Err(GasError::Config(format!("meta-path step expects type {want}, got {got}")));
        }
    }
    let agg = params.aggregators.get(step).ok_or_else(|| {
        GasError::Config(format!(
            "no parameters for meta-path step {}-{}-{}",
            step.source, step.relation, step.target
        ))
    })?;
    let v = *params
        .combiners
        .get(&step.target)
        .ok_or_else(|| GasError::Config(format!("no combination weights for node type {}", step.target)))?;
    node_rows_update(tape, target.var, source.var, relation.var, rows, width, agg, v)
}
