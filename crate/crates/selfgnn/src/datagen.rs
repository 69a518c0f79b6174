//! Deterministic synthetic citation-style graphs: a planted-partition
//! topology with homophilous edges and sparse binary bag-of-words features
//! whose vocabulary blocks correlate with the classes.
//!
//! The generator exists for tests, demos, and as a labeled stand-in corpus
//! wherever a real dataset directory is not available. Everything is drawn
//! from one named substream of the seed, so a config reproduces its graph
//! bit-for-bit.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::eval::stratified_split;
use crate::graph::Graph;
use crate::rng::named_rng;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub num_features: usize,
    /// Mean degree of the sampled multigraph before deduplication.
    pub avg_degree: f64,
    /// Probability that a sampled edge stays inside its endpoint's class.
    pub intra_edge_fraction: f64,
    /// Active (set-to-one) feature slots drawn per node.
    pub features_per_node: usize,
    /// Probability a draw comes from the class-neutral shared vocabulary
    /// instead of the node's class block.
    pub feature_overlap: f64,
    /// Fraction of nodes whose features are drawn from a wrong class's
    /// block; raises the ceiling-gap between raw features and smoothed
    /// embeddings.
    pub label_noise: f64,
    /// (train, val, test) fractions handed to [`stratified_split`].
    pub split_fractions: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_nodes: 800,
            num_classes: 5,
            num_features: 300,
            avg_degree: 7.0,
            intra_edge_fraction: 0.93,
            features_per_node: 12,
            feature_overlap: 0.35,
            label_noise: 0.3,
            split_fractions: (0.7, 0.1, 0.2),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_nodes < 3 * self.num_classes {
            return Err(Error::Config(
                "synth: need at least 2 classes and 3 nodes per class".into(),
            ));
        }
        // Every class needs its own vocabulary block plus a shared one.
        if self.num_features < 2 * (self.num_classes + 1) {
            return Err(Error::Config(format!(
                "synth: {} features cannot host {} class blocks",
                self.num_features, self.num_classes
            )));
        }
        for (name, v) in [
            ("intra_edge_fraction", self.intra_edge_fraction),
            ("feature_overlap", self.feature_overlap),
            ("label_noise", self.label_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("synth: {name} must be in [0,1], got {v}")));
            }
        }
        if self.avg_degree <= 0.0 || self.features_per_node == 0 {
            return Err(Error::Config("synth: degree and features per node must be positive".into()));
        }
        Ok(())
    }
}

/// Generate a labeled, split graph from `cfg`.
pub fn synthetic_graph(cfg: &SynthConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.num_nodes;
    let c = cfg.num_classes;
    let mut rng = named_rng(cfg.seed, "synth");

    // Balanced labels: node i belongs to class i mod c.
    let labels: Vec<u32> = (0..n).map(|i| (i % c) as u32).collect();
    let class_members: Vec<Vec<usize>> = (0..c)
        .map(|k| (0..n).filter(|i| i % c == k).collect())
        .collect();

    // Edges: every node draws one partner (no isolated nodes), then random
    // endpoints fill in the remaining budget. Partners stay in-class with
    // probability intra_edge_fraction.
    let draw_partner = |u: usize, rng: &mut rand_chacha::ChaCha12Rng| -> usize {
        let class = labels[u] as usize;
        loop {
            let v = if rng.gen::<f64>() < cfg.intra_edge_fraction {
                class_members[class][rng.gen_range(0..class_members[class].len())]
            } else {
                rng.gen_range(0..n)
            };
            if v != u {
                return v;
            }
        }
    };
    let target_edges = ((cfg.avg_degree * n as f64) / 2.0).round() as usize;
    let mut edges = Vec::with_capacity(target_edges.max(n));
    for u in 0..n {
        let v = draw_partner(u, &mut rng);
        edges.push((u, v));
    }
    while edges.len() < target_edges {
        let u = rng.gen_range(0..n);
        let v = draw_partner(u, &mut rng);
        edges.push((u, v));
    }

    // Features: the vocabulary splits into one block per class plus a
    // shared block from the remainder. Column ids are then scattered by a
    // seeded shuffle — real bag-of-words vocabularies carry no column
    // order, and leaving the blocks contiguous would make order-sensitive
    // consumers (like the split-in-half augmentation) see structure that
    // datasets don't have.
    let block = cfg.num_features / (c + 1);
    let shared_start = block * c;
    let mut column_of: Vec<usize> = (0..cfg.num_features).collect();
    column_of.shuffle(&mut rng);
    let mut features = Matrix::zeros(n, cfg.num_features);
    for i in 0..n {
        // A noisy node writes the vocabulary of some other class.
        let mut feature_class = labels[i] as usize;
        if cfg.label_noise > 0.0 && rng.gen::<f64>() < cfg.label_noise {
            let shift = rng.gen_range(1..c);
            feature_class = (feature_class + shift) % c;
        }
        for _ in 0..cfg.features_per_node {
            let f = if rng.gen::<f64>() < cfg.feature_overlap {
                rng.gen_range(shared_start..cfg.num_features)
            } else {
                block * feature_class + rng.gen_range(0..block)
            };
            features[(i, column_of[f])] = 1.0;
        }
    }

    let some_labels: Vec<Option<u32>> = labels.iter().map(|l| Some(*l)).collect();
    let split = stratified_split(&some_labels, cfg.split_fractions, cfg.seed)?;
    Graph::new(n, &edges, features, some_labels, split, c)
}
