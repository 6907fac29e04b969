use std::collections::HashMap;

use log::warn;

use super::records::{CommentRecord, NodeFeatures};
use crate::autodiff::Tensor;
use crate::error::{GasError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    User(usize),
    Item(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    User,
    Item,
}

/// Users, items and the comment edges between them.
///
/// Edge `k` is record `k` of the ingested list. Users and items are
/// numbered in order of first appearance. Each adjacency list is sorted by
/// `(timestamp, comment_id)`.
#[derive(Clone, Debug)]
pub struct BipartiteGraph {
    records: Vec<CommentRecord>,
    users: Vec<String>,
    items: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    edge_index: HashMap<String, usize>,
    edge_user: Vec<usize>,
    edge_item: Vec<usize>,
    user_adj: Vec<Vec<usize>>,
    item_adj: Vec<Vec<usize>>,
    user_features: Option<Tensor>,
    item_features: Option<Tensor>,
}

fn intern(index: &mut HashMap<String, usize>, names: &mut Vec<String>, key: &str) -> usize {
    if let Some(&i) = index.get(key) {
        return i;
    }
    names.push(key.to_string());
    index.insert(key.to_string(), names.len() - 1);
    names.len() - 1
}

impl BipartiteGraph {
    pub fn build(records: Vec<CommentRecord>) -> Result<Self> {
        let mut g = BipartiteGraph {
            users: Vec::new(),
            items: Vec::new(),
            user_index: HashMap::new(),
            item_index: HashMap::new(),
            edge_index: HashMap::with_capacity(records.len()),
            edge_user: Vec::with_capacity(records.len()),
            edge_item: Vec::with_capacity(records.len()),
            user_adj: Vec::new(),
            item_adj: Vec::new(),
            user_features: None,
            item_features: None,
            records: Vec::new(),
        };
        for (k, r) in records.iter().enumerate() {
            if g.edge_index.insert(r.comment_id.clone(), k).is_some() {
                return Err(GasError::DuplicateId(r.comment_id.clone()));
            }
            let u = intern(&mut g.user_index, &mut g.users, &r.user_id);
            let i = intern(&mut g.item_index, &mut g.items, &r.item_id);
            if u == g.user_adj.len() {
                g.user_adj.push(Vec::new());
            }
            if i == g.item_adj.len() {
                g.item_adj.push(Vec::new());
            }
            g.user_adj[u].push(k);
            g.item_adj[i].push(k);
            g.edge_user.push(u);
            g.edge_item.push(i);
        }
        let key = |e: &usize| (records[*e].timestamp, records[*e].comment_id.clone());
        for adj in g.user_adj.iter_mut().chain(g.item_adj.iter_mut()) {
            adj.sort_by_key(key);
        }
        g.records = records;
        Ok(g)
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_edges(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[CommentRecord] {
        &self.records
    }

    pub fn record(&self, edge: usize) -> &CommentRecord {
        &self.records[edge]
    }

    pub fn edge_user(&self, edge: usize) -> usize {
        self.edge_user[edge]
    }

    pub fn edge_item(&self, edge: usize) -> usize {
        self.edge_item[edge]
    }

    pub fn timestamp(&self, edge: usize) -> i64 {
        self.records[edge].timestamp
    }

    pub fn user_id(&self, u: usize) -> &str {
        &self.users[u]
    }

    pub fn item_id(&self, i: usize) -> &str {
        &self.items[i]
    }

    pub fn user(&self, id: &str) -> Result<usize> {
        self.user_index.get(id).copied().ok_or_else(|| GasError::Lookup {
            kind: "user",
            id: id.into(),
        })
    }

    pub fn item(&self, id: &str) -> Result<usize> {
        self.item_index.get(id).copied().ok_or_else(|| GasError::Lookup {
            kind: "item",
            id: id.into(),
        })
    }

    pub fn edge(&self, comment_id: &str) -> Result<usize> {
        self.edge_index
            .get(comment_id)
            .copied()
            .ok_or_else(|| GasError::Lookup {
                kind: "comment",
                id: comment_id.into(),
            })
    }

    /// `E(v)`, sorted by time.
    pub fn adjacency(&self, node: NodeRef) -> Result<&[usize]> {
        match node {
            NodeRef::User(u) => self.user_adj.get(u),
            NodeRef::Item(i) => self.item_adj.get(i),
        }
        .map(Vec::as_slice)
        .ok_or_else(|| GasError::Lookup {
            kind: "node",
            id: format!("{node:?}"),
        })
    }

    pub fn degree(&self, node: NodeRef) -> usize {
        self.adjacency(node).map_or(0, <[usize]>::len)
    }

    /// The endpoint of `edge` opposite to `side`.
    pub fn opposite(&self, edge: usize, side: Side) -> NodeRef {
        match side {
            Side::User => NodeRef::Item(self.edge_item[edge]),
            Side::Item => NodeRef::User(self.edge_user[edge]),
        }
    }

    /// Attach ingested node features. Nodes without a vector get zeros; all
    /// vectors on one side must share a dimension.
    pub fn attach_features(&mut self, feats: &NodeFeatures) -> Result<()> {
        self.user_features = side_matrix(&self.users, &feats.users, "user")?;
        self.item_features = side_matrix(&self.items, &feats.items, "item")?;
        Ok(())
    }

    pub fn user_features(&self) -> Option<&Tensor> {
        self.user_features.as_ref()
    }

    pub fn item_features(&self) -> Option<&Tensor> {
        self.item_features.as_ref()
    }
}

fn side_matrix(
    names: &[String],
    feats: &HashMap<String, Vec<f64>>,
    kind: &str,
) -> Result<Option<Tensor>> {
    let mut dims: Vec<usize> = feats.values().map(Vec::len).collect();
    dims.sort_unstable();
    dims.dedup();
    let d = match dims.as_slice() {
        [] => return Ok(None),
        [d] => *d,
        _ => {
            return Err(GasError::Config(format!(
                "{kind} feature vectors have mixed dimensions {dims:?}"
            )))
        }
    };
    let mut data = Vec::with_capacity(names.len() * d);
    let mut missing = 0;
    for n in names {
        match feats.get(n) {
            Some(v) => data.extend_from_slice(v),
            None => {
                missing += 1;
                data.extend(std::iter::repeat_n(0.0, d));
            }
        }
    }
    if missing > 0 {
        warn!("{missing} {kind}s have no feature vector; using zeros");
    }
    Ok(Some(Tensor::matrix(names.len(), d, data)?))
}
