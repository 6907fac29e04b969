//! Spam comment detection with graph convolutions over a user–item–comment
//! graph and a KNN graph of similar comments.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod gcn;
pub mod graph;
pub mod init;
pub mod knn;
pub mod model;
pub mod synth;
pub mod text;

pub use error::{GasError, Result};
