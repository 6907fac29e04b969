use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::bipartite::BipartiteGraph;
use crate::error::{GasError, Result};

/// Undirected similarity graph over comments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CommentGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    // neighbors sorted by (similarity desc, node asc)
    adj: Vec<Vec<(usize, f64)>>,
}

impl CommentGraph {
    pub fn new<S: Into<String>>(ids: impl IntoIterator<Item = S>) -> Self {
        let mut g = CommentGraph::default();
        for id in ids {
            g.node(&id.into());
        }
        g
    }

    fn node(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        self.ids.push(id.to_string());
        self.adj.push(Vec::new());
        self.index.insert(id.to_string(), self.ids.len() - 1);
        self.ids.len() - 1
    }

    /// Adds edge `a -- b`. Self-loops are ignored; a repeated pair keeps the larger
    /// similarity.
    pub fn add_edge(&mut self, a: usize, b: usize, sim: f64) {
        if a == b {
            return;
        }
        for (x, y) in [(a, b), (b, a)] {
            match self.adj[x].iter_mut().find(|(n, _)| *n == y) {
                Some(entry) => entry.1 = entry.1.max(sim),
                None => self.adj[x].push((y, sim)),
            }
        }
    }

    /// Sorts every adjacency list; call after the last `add_edge`.
    pub fn finish(&mut self) {
        let ids = &self.ids;
        for list in &mut self.adj {
            list.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0])));
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Each undirected edge once as `(a, b, sim)` with `id(a) < id(b)`,
    /// sorted by ids.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out: Vec<(usize, usize, f64)> = self
            .adj
            .iter()
            .enumerate()
            .flat_map(|(a, list)| {
                list.iter()
                    .filter(move |(b, _)| self.ids[a] < self.ids[*b])
                    .map(move |&(b, s)| (a, b, s))
            })
            .collect();
        out.sort_by(|x, y| (&self.ids[x.0], &self.ids[x.1]).cmp(&(&self.ids[y.0], &self.ids[y.1])));
        out
    }

    /// `comment_id_a comment_id_b similarity` per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for (a, b, sim) in self.edges() {
            writeln!(s, "{} {} {sim}", self.ids[a], self.ids[b]).expect("string write");
        }
        s
    }

    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_edge_list())?;
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(reader: R) -> Result<Self> {
        let mut g = CommentGraph::default();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.is_empty() {
                continue;
            }
            let [a, b, s] = parts.as_slice() else {
                return Err(GasError::Parse {
                    line: n + 1,
                    msg: format!("expected 3 fields, found {}", parts.len()),
                });
            };
            let sim: f64 = s.parse().map_err(|e| GasError::Parse {
                line: n + 1,
                msg: format!("bad similarity `{s}`: {e}"),
            })?;
            let (ia, ib) = (g.node(a), g.node(b));
            g.add_edge(ia, ib, sim);
        }
        g.finish();
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_edge_list(BufReader::new(std::fs::File::open(path)?))
    }

    /// Neighbor lists re-indexed by edge id of `graph`. Comments absent from
    /// this graph are isolated; ids unknown to `graph` are an error.
    pub fn align(&self, graph: &BipartiteGraph) -> Result<Vec<Vec<(usize, f64)>>> {
        let mut to_edge = Vec::with_capacity(self.ids.len());
        for id in &self.ids {
            to_edge.push(graph.edge(id)?);
        }
        let mut out = vec![Vec::new(); graph.num_edges()];
        for (i, list) in self.adj.iter().enumerate() {
            out[to_edge[i]] = list.iter().map(|&(n, s)| (to_edge[n], s)).collect();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_list_round_trip() {
        let mut g = CommentGraph::new(["a", "b", "c"]);
        g.add_edge(0, 1, 0.5);
        g.add_edge(2, 1, 0.25);
        g.add_edge(1, 1, 0.9);
        g.add_edge(1, 0, 0.75);
        g.finish();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.neighbors(1), &[(0, 0.75), (2, 0.25)]);
        let text = g.to_edge_list();
        assert_eq!(text, "a b 0.75\nb c 0.25\n");
        let back = CommentGraph::read_edge_list(text.as_bytes()).unwrap();
        assert_eq!(back.to_edge_list(), text);
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = CommentGraph::read_edge_list("a b 0.1\na b\n".as_bytes()).unwrap_err();
        assert!(matches!(err, GasError::Parse { line: 2, .. }));
    }
}
