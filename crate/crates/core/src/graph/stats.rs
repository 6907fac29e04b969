use std::collections::BTreeSet;

use super::bipartite::{BipartiteGraph, NodeRef};
use super::comment_graph::CommentGraph;
use crate::error::{GasError, Result};

/// A graph that can list the comments within one hop of a comment.
pub trait CommentNeighborhood {
    /// Edge ids of the comments one hop from `edge`, excluding itself.
    fn one_hop(&self, edge: usize) -> Result<BTreeSet<usize>>;
}

impl CommentNeighborhood for BipartiteGraph {
    /// Comments sharing the user or the item.
    fn one_hop(&self, edge: usize) -> Result<BTreeSet<usize>> {
        if edge >= self.num_edges() {
            return Err(GasError::Lookup {
                kind: "comment",
                id: edge.to_string(),
            });
        }
        let mut out: BTreeSet<usize> = self
            .adjacency(NodeRef::User(self.edge_user(edge)))?
            .iter()
            .chain(self.adjacency(NodeRef::Item(self.edge_item(edge)))?)
            .copied()
            .collect();
        out.remove(&edge);
        Ok(out)
    }
}

/// Comment graph neighborhoods expressed in edge ids of a bipartite graph
/// (see [`CommentGraph::align`]).
pub struct AlignedCommentGraph(pub Vec<Vec<(usize, f64)>>);

impl AlignedCommentGraph {
    pub fn new(cg: &CommentGraph, graph: &BipartiteGraph) -> Result<Self> {
        Ok(AlignedCommentGraph(cg.align(graph)?))
    }
}

impl CommentNeighborhood for AlignedCommentGraph {
    fn one_hop(&self, edge: usize) -> Result<BTreeSet<usize>> {
        let list = self.0.get(edge).ok_or_else(|| GasError::Lookup {
            kind: "comment",
            id: edge.to_string(),
        })?;
        Ok(list.iter().map(|&(n, _)| n).filter(|&n| n != edge).collect())
    }
}

/// Mean number of spam comments within one hop of each queried comment.
/// `is_spam(e)` gives the label of edge `e`. Returns 0 for an empty query.
pub fn neighbor_spam_stats<G: CommentNeighborhood + ?Sized>(
    graph: &G,
    comments: &[usize],
    is_spam: impl Fn(usize) -> bool,
) -> Result<f64> {
    if comments.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0usize;
    for &c in comments {
        total += graph.one_hop(c)?.into_iter().filter(|&n| is_spam(n)).count();
    }
    Ok(total as f64 / comments.len() as f64)
}
