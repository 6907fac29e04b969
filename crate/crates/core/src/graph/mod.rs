//! The user–item–comment graph, the comment similarity graph, time-related
//! neighbor sampling, and neighborhood statistics.

mod bipartite;
mod comment_graph;
mod records;
mod sampling;
mod stats;

pub use bipartite::{BipartiteGraph, NodeRef, Side};
pub use comment_graph::CommentGraph;
pub use records::{
    ingest, load_node_features, read_node_features, read_records, write_node_features, write_records,
    CommentRecord, Label, NodeFeatures,
};
pub use sampling::{
    multi_hop_sample, sample_neighbors_time, BlockLayer, EdgeRow, NeighborSample, NodeRow, SampleConfig,
    SampledBlock,
};
pub use stats::{neighbor_spam_stats, AlignedCommentGraph, CommentNeighborhood};
