//! Clustered training for graphs whose diffusion would not fit in memory:
//! partition the node set, randomly merge clusters into batches, build the
//! augmentation views per batch subgraph, and run the usual Siamese loop
//! over batches.
//!
//! The partitioner is a seeded multi-source BFS grower (component-aware,
//! smallest-cluster-first) rather than a METIS binding; real partition
//! files can be imported through [`Partition::from_assignment`].

use rand::seq::SliceRandom;
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::named_rng;
use crate::scalar::Scalar;
use crate::trainer::{make_views, train_on_batches, AugSpec, Batch, TrainConfig, TrainOutcome};

/// A disjoint cover of the node set by k non-empty clusters.
#[derive(Debug, Clone)]
pub struct Partition {
    pub k: usize,
    /// Node → cluster id in [0, k).
    pub assignment: Vec<u32>,
    /// Per-cluster sorted node lists.
    pub clusters: Vec<Vec<usize>>,
}

impl Partition {
    /// Build (and validate) a partition from a per-node assignment, e.g.
    /// read from an external partitioner's output file.
    pub fn from_assignment(assignment: Vec<u32>, k: usize) -> Result<Partition> {
        if k == 0 {
            return Err(Error::Config("partition: k must be positive".into()));
        }
        let mut clusters = vec![Vec::new(); k];
        for (node, &c) in assignment.iter().enumerate() {
            let c = c as usize;
            if c >= k {
                return Err(Error::Data(format!(
                    "partition: node {node} assigned to cluster {c} but k = {k}"
                )));
            }
            clusters[c].push(node);
        }
        if let Some(empty) = clusters.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!("partition: cluster {empty} is empty")));
        }
        Ok(Partition { k, assignment, clusters })
    }

    /// Hard size cap honored by the grower: no cluster exceeds 2·N/k.
    pub fn size_cap(num_nodes: usize, k: usize) -> usize {
        (2 * num_nodes).div_ceil(k).max(1)
    }
}

/// Connected components by BFS, used to spread partition seeds so that
/// disconnected regions end up in different clusters whenever k allows.
fn connected_components(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    let mut comp = vec![usize::MAX; n];
    let mut components = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        comp[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for (v, _) in g.adjacency.row_iter(u) {
                if comp[v] == usize::MAX {
                    comp[v] = id;
                    members.push(v);
                    queue.push_back(v);
                }
            }
        }
        components.push(members);
    }
    components
}

/// Seeded balanced partition into k clusters by multi-source BFS growth.
///
/// Seeds are spread across connected components in proportion to their
/// size (largest remainder), then the smallest cluster grows one node at a
/// time from its BFS frontier, falling back to an unassigned node when its
/// frontier is exhausted. No cluster exceeds [`Partition::size_cap`].
pub fn partition_graph(g: &Graph, k: usize, seed: u64) -> Result<Partition> {
    let n = g.num_nodes();
    if k == 0 || k > n {
        return Err(Error::Config(format!("partition: k = {k} out of range 1..={n}")));
    }
    let cap = Partition::size_cap(n, k);
    let mut rng = named_rng(seed, "partition");

    // Shuffle each component's members; seed quotas by largest remainder.
    let mut components = connected_components(g);
    for comp in &mut components {
        comp.shuffle(&mut rng);
    }
    let mut seats: Vec<usize> = components
        .iter()
        .map(|c| k * c.len() / n) // floor share
        .collect();
    let mut assigned_seats: usize = seats.iter().sum();
    let mut order: Vec<usize> = (0..components.len()).collect();
    order.sort_by_key(|&i| {
        // Largest fractional remainder first; component index breaks ties.
        let rem = (k * components[i].len()) % n;
        (std::cmp::Reverse(rem), i)
    });
    let mut cursor = 0;
    while assigned_seats < k {
        let i = order[cursor % order.len()];
        cursor += 1;
        if seats[i] < components[i].len() {
            seats[i] += 1;
            assigned_seats += 1;
        }
    }

    let mut assignment = vec![u32::MAX; n];
    let mut sizes = vec![0usize; k];
    let mut frontiers: Vec<VecDeque<usize>> = vec![VecDeque::new(); k];
    let mut cluster = 0;
    for (comp, &quota) in components.iter().zip(&seats) {
        for &node in comp.iter().take(quota) {
            assignment[node] = cluster as u32;
            sizes[cluster] = 1;
            for (v, _) in g.adjacency.row_iter(node) {
                frontiers[cluster].push_back(v);
            }
            cluster += 1;
        }
    }
    debug_assert_eq!(cluster, k);

    // Global fallback order for clusters whose frontier dries up.
    let unassigned_order: Vec<usize> = components.iter().flatten().copied().collect();
    let mut fallback_cursor = 0;
    let mut remaining = n - k;
    while remaining > 0 {
        // Grow the smallest growable cluster (deterministic tie-break on id).
        let c = (0..k)
            .filter(|&c| sizes[c] < cap)
            .min_by_key(|&c| (sizes[c], c))
            .ok_or_else(|| Error::Numeric("partition: all clusters hit the size cap".into()))?;
        let mut grabbed = None;
        while let Some(u) = frontiers[c].pop_front() {
            if assignment[u] == u32::MAX {
                grabbed = Some(u);
                break;
            }
        }
        let u = match grabbed {
            Some(u) => u,
            None => {
                while assignment[unassigned_order[fallback_cursor]] != u32::MAX {
                    fallback_cursor += 1;
                }
                unassigned_order[fallback_cursor]
            }
        };
        assignment[u] = c as u32;
        sizes[c] += 1;
        remaining -= 1;
        for (v, _) in g.adjacency.row_iter(u) {
            if assignment[v] == u32::MAX {
                frontiers[c].push_back(v);
            }
        }
    }
    Partition::from_assignment(assignment, k)
}

/// Shuffle the clusters by seed and deal them round-robin into b batches;
/// each batch is the sorted union of its clusters.
pub fn merge_clusters(p: &Partition, b: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if b == 0 || b > p.k {
        return Err(Error::Config(format!(
            "merge: batch count {b} out of range 1..={}",
            p.k
        )));
    }
    let mut order: Vec<usize> = (0..p.k).collect();
    order.shuffle(&mut named_rng(seed, "merge"));
    let mut groups = vec![Vec::new(); b];
    for (i, &c) in order.iter().enumerate() {
        groups[i % b].extend_from_slice(&p.clusters[c]);
    }
    for group in &mut groups {
        group.sort_unstable();
    }
    Ok(groups)
}

/// Restrict the graph to `nodes` (sorted, deduplicated internally): keeps
/// intra-set edges, slices features/labels/split, relabels to 0..len. The
/// returned list maps new ids back to the originals.
pub fn induced_subgraph(g: &Graph, nodes: &[usize]) -> Result<(Graph, Vec<usize>)> {
    if nodes.is_empty() {
        return Err(Error::Data("induced_subgraph: empty node set".into()));
    }
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let n = g.num_nodes();
    if *sorted.last().expect("non-empty") >= n {
        return Err(Error::Data("induced_subgraph: node out of range".into()));
    }
    let mut new_id = vec![usize::MAX; n];
    for (i, &node) in sorted.iter().enumerate() {
        new_id[node] = i;
    }
    let mut edges = Vec::new();
    for &u in &sorted {
        for (v, _) in g.adjacency.row_iter(u) {
            if u < v && new_id[v] != usize::MAX {
                edges.push((new_id[u], new_id[v]));
            }
        }
    }
    let features = g.features.gather_rows(&sorted);
    let labels = sorted.iter().map(|&i| g.labels[i]).collect();
    let split = sorted.iter().map(|&i| g.split[i]).collect();
    let sub = Graph::new(sorted.len(), &edges, features, labels, split, g.num_classes)?;
    Ok((sub, sorted))
}

/// Clustered training: partition into k clusters, merge into b batches,
/// build views once per batch subgraph (diffusion runs on n_b×n_b
/// problems only), and run the shared training loop. Passing an imported
/// partition skips the built-in grower.
pub fn train_clustered<F: Scalar>(
    g: &Graph,
    spec: &AugSpec,
    cfg: &TrainConfig,
    k: usize,
    b: usize,
    imported: Option<Partition>,
) -> Result<TrainOutcome<F>> {
    let partition = match imported {
        Some(p) => {
            if p.assignment.len() != g.num_nodes() {
                return Err(Error::Data("partition length != node count".into()));
            }
            p
        }
        None => partition_graph(g, k, cfg.seed)?,
    };
    let groups = merge_clusters(&partition, b, cfg.seed)?;
    let mut batches = Vec::with_capacity(groups.len());
    for nodes in groups {
        let (sub, ids) = induced_subgraph(g, &nodes)?;
        let views = make_views::<F>(&sub, spec)?;
        batches.push(Batch { nodes: ids, views });
    }
    train_on_batches(g, &batches, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synthetic_graph, SynthConfig};
    use crate::dense::Matrix;
    use crate::graph::Split;
    use crate::trainer::{train, AugVariant};

    fn toy_graph() -> Graph {
        synthetic_graph(&SynthConfig {
            num_nodes: 48,
            num_classes: 2,
            num_features: 12,
            avg_degree: 5.0,
            features_per_node: 3,
            label_noise: 0.0,
            seed: 7,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    /// Two disjoint complete graphs on `half` nodes each.
    fn two_cliques(half: usize) -> Graph {
        let n = 2 * half;
        let mut edges = Vec::new();
        for block in 0..2 {
            let base = block * half;
            for i in 0..half {
                for j in (i + 1)..half {
                    edges.push((base + i, base + j));
                }
            }
        }
        Graph::new(
            n,
            &edges,
            Matrix::from_fn(n, 5, |i, j| ((i + j) % 3) as f64),
            vec![None; n],
            vec![Split::None; n],
            0,
        )
        .unwrap()
    }

    fn assert_is_cover(p: &Partition, n: usize) {
        let mut seen = vec![false; n];
        for (c, cluster) in p.clusters.iter().enumerate() {
            assert!(!cluster.is_empty(), "cluster {c} empty");
            for &node in cluster {
                assert!(!seen[node], "node {node} in two clusters");
                seen[node] = true;
                assert_eq!(p.assignment[node] as usize, c);
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn single_cluster_holds_everything() {
        let g = toy_graph();
        let p = partition_graph(&g, 1, 0).unwrap();
        assert_is_cover(&p, 48);
        assert_eq!(p.clusters[0].len(), 48);
    }

    #[test]
    fn n_clusters_are_singletons() {
        let g = toy_graph();
        let p = partition_graph(&g, 48, 0).unwrap();
        assert_is_cover(&p, 48);
        assert!(p.clusters.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        let g = toy_graph();
        assert!(partition_graph(&g, 0, 0).is_err());
        assert!(partition_graph(&g, 49, 0).is_err());
    }

    #[test]
    fn two_cliques_split_cleanly() {
        let g = two_cliques(50);
        for seed in 0..5 {
            let p = partition_graph(&g, 2, seed).unwrap();
            assert_is_cover(&p, 100);
            // Zero-cut split: every cluster is exactly one clique.
            for cluster in &p.clusters {
                assert_eq!(cluster.len(), 50);
                let block = cluster[0] / 50;
                assert!(cluster.iter().all(|&v| v / 50 == block));
            }
        }
    }

    #[test]
    fn sizes_respect_the_hard_cap() {
        let g = toy_graph();
        for k in [2, 3, 5, 7] {
            let p = partition_graph(&g, k, 11).unwrap();
            assert_is_cover(&p, 48);
            let cap = Partition::size_cap(48, k);
            for cluster in &p.clusters {
                assert!(cluster.len() <= cap, "k={k}: {} > cap {cap}", cluster.len());
            }
        }
    }

    #[test]
    fn partitioning_is_deterministic_per_seed() {
        let g = toy_graph();
        let a = partition_graph(&g, 4, 3).unwrap();
        let b = partition_graph(&g, 4, 3).unwrap();
        assert_eq!(a.assignment, b.assignment);
        let c = partition_graph(&g, 4, 4).unwrap();
        assert_ne!(a.assignment, c.assignment);
    }

    #[test]
    fn merge_endpoints() {
        let g = toy_graph();
        let p = partition_graph(&g, 6, 2).unwrap();
        // b = k: groups are the original clusters (shuffled order).
        let groups = merge_clusters(&p, 6, 2).unwrap();
        let mut sorted_clusters: Vec<Vec<usize>> = p.clusters.clone();
        sorted_clusters.sort();
        let mut sorted_groups = groups.clone();
        sorted_groups.sort();
        assert_eq!(sorted_clusters, sorted_groups);
        // b = 1: one group covering everything.
        let one = merge_clusters(&p, 1, 2).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], (0..48).collect::<Vec<_>>());
        // Any b: disjoint cover.
        for b in 2..=5 {
            let groups = merge_clusters(&p, b, 9).unwrap();
            let mut all: Vec<usize> = groups.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..48).collect::<Vec<_>>());
        }
        assert!(merge_clusters(&p, 7, 0).is_err());
        assert!(merge_clusters(&p, 0, 0).is_err());
    }

    #[test]
    fn induced_subgraph_identity_and_slices() {
        let g = toy_graph();
        let all: Vec<usize> = (0..48).collect();
        let (sub, ids) = induced_subgraph(&g, &all).unwrap();
        assert_eq!(ids, all);
        assert_eq!(sub.adjacency.nnz(), g.adjacency.nnz());
        assert_eq!(sub.features, g.features);
        assert_eq!(sub.labels, g.labels);

        // Two endpoints of one edge.
        let (u, v, _) = {
            let mut it = None;
            for i in 0..48 {
                if let Some((j, w)) = g.adjacency.row_iter(i).next() {
                    it = Some((i, j, w));
                    break;
                }
            }
            it.unwrap()
        };
        let pair = if u < v { vec![u, v] } else { vec![v, u] };
        let (sub, ids) = induced_subgraph(&g, &pair).unwrap();
        assert_eq!(sub.num_nodes(), 2);
        assert_eq!(sub.num_edges(), 1);
        assert_eq!(ids, pair);

        // Triangle minus one node leaves a single edge.
        let tri = Graph::new(
            3,
            &[(0, 1), (1, 2), (0, 2)],
            Matrix::zeros(3, 1),
            vec![None; 3],
            vec![Split::None; 3],
            0,
        )
        .unwrap();
        let (sub, _) = induced_subgraph(&tri, &[0, 2]).unwrap();
        assert_eq!(sub.num_edges(), 1);

        assert!(induced_subgraph(&g, &[]).is_err());
        assert!(induced_subgraph(&g, &[48]).is_err());
    }

    #[test]
    fn induced_subgraph_preserves_adjacency() {
        let g = toy_graph();
        let nodes: Vec<usize> = (0..48).step_by(3).collect();
        let (sub, ids) = induced_subgraph(&g, &nodes).unwrap();
        for (a, &org_a) in ids.iter().enumerate() {
            for (b, &org_b) in ids.iter().enumerate() {
                let in_sub = sub.adjacency.get(a, b) != 0.0;
                let in_g = g.adjacency.get(org_a, org_b) != 0.0;
                assert_eq!(in_sub, in_g, "edge ({org_a},{org_b})");
            }
        }
    }

    #[test]
    fn one_batch_clustered_training_equals_full_batch() {
        let g = toy_graph();
        let cfg = TrainConfig {
            epochs: 3,
            eval_every: 0,
            layer_widths: vec![6, 4],
            predictor_hidden: 6,
            seed: 13,
            ..TrainConfig::default()
        };
        let spec = AugSpec::new(AugVariant::Ppr);
        let full = train::<f64>(&g, &spec, &cfg).unwrap();
        // k > 1 clusters merged into a single batch covering all nodes: the
        // induced subgraph is the whole graph, so training must agree
        // number-for-number with the full-batch run.
        let clustered = train_clustered::<f64>(&g, &spec, &cfg, 4, 1, None).unwrap();
        assert_eq!(full.history, clustered.history);
        for (a, b) in full
            .params
            .student
            .layers
            .iter()
            .zip(&clustered.params.student.layers)
        {
            assert_eq!(a.weight, b.weight);
        }
    }

    #[test]
    fn multi_batch_training_runs_and_probes() {
        let g = toy_graph();
        let cfg = TrainConfig {
            epochs: 4,
            eval_every: 2,
            layer_widths: vec![6, 4],
            predictor_hidden: 6,
            dropout: 0.1,
            seed: 13,
            ..TrainConfig::default()
        };
        let out = train_clustered::<f32>(&g, &AugSpec::new(AugVariant::Split), &cfg, 4, 2, None).unwrap();
        assert_eq!(out.history.len(), 4);
        assert!(out.best_epoch.is_some());
        for r in &out.history {
            assert!((0.0..=4.0).contains(&r.loss));
        }
        // Determinism across reruns.
        let again = train_clustered::<f32>(&g, &AugSpec::new(AugVariant::Split), &cfg, 4, 2, None).unwrap();
        assert_eq!(out.history, again.history);
    }

    #[test]
    fn imported_partition_is_honored() {
        let g = toy_graph();
        // Alternating assignment imported from "outside".
        let assignment: Vec<u32> = (0..48).map(|i| (i % 2) as u32).collect();
        let p = Partition::from_assignment(assignment.clone(), 2).unwrap();
        assert_eq!(p.clusters[0].len(), 24);
        let cfg = TrainConfig {
            epochs: 1,
            eval_every: 0,
            layer_widths: vec![6, 4],
            predictor_hidden: 6,
            seed: 1,
            ..TrainConfig::default()
        };
        let out =
            train_clustered::<f64>(&g, &AugSpec::new(AugVariant::Standardize), &cfg, 2, 2, Some(p));
        assert!(out.is_ok());
        // Wrong length is rejected.
        let bad = Partition::from_assignment(vec![0u32; 10], 1).unwrap();
        let err = train_clustered::<f64>(&g, &AugSpec::new(AugVariant::Standardize), &cfg, 1, 1, Some(bad));
        assert!(err.is_err());
    }

    #[test]
    fn from_assignment_validates() {
        assert!(Partition::from_assignment(vec![0, 1, 2], 2).is_err()); // id out of range
        assert!(Partition::from_assignment(vec![0, 0, 0], 2).is_err()); // empty cluster
        assert!(Partition::from_assignment(vec![], 0).is_err());
    }
}
