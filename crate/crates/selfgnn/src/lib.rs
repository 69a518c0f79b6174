//! Self-supervised graph embeddings without negative sampling.
//!
//! The crate trains a two-network (student/teacher) graph encoder: the
//! student follows gradients of a cosine alignment loss between two augmented
//! views of one graph, the teacher trails the student as an exponential
//! moving average, and batch normalization inside the encoder keeps the
//! representation from collapsing to a constant. Topology augmentations are
//! graph diffusion operators (personalized PageRank, heat kernel, Katz);
//! feature augmentations are deterministic transforms such as splitting,
//! standardization, and local-degree profiles.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod datagen;
pub mod dense;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod sparse;
pub mod trainer;

pub use dense::Matrix;
pub use graph::{load_graph_bundle, save_graph_bundle, symmetric_renormalize, Graph, Split};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use sparse::CsrMatrix;
