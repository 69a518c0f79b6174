//! The in-memory graph (adjacency + node features + optional labels/splits)
//! and the TSV bundle format it is loaded from and saved to.
//!
//! A bundle is a directory of TSV files: `graph.tsv` (one `u<TAB>v` edge per
//! line, 0-based ids, `#` comments allowed), `features.tsv` (one row of reals
//! per node), `meta.tsv` (`key<TAB>value` with `num_nodes`, `num_features`,
//! `num_classes`), and optionally `labels.tsv` (class id or -1) and
//! `split.tsv` (`train`/`val`/`test`/`none`). Edges are undirected: the
//! loader symmetrizes, deduplicates, and drops self-loops.

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use std::collections::BTreeSet;
use std::fmt;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "none" => Some(Split::None),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    /// Symmetric, unweighted (all stored values 1.0), zero diagonal.
    pub adjacency: CsrMatrix<f64>,
    pub features: Matrix<f64>,
    /// `None` = unlabeled.
    pub labels: Vec<Option<u32>>,
    pub split: Vec<Split>,
    pub num_classes: usize,
}

impl Graph {
    /// Assemble from an undirected edge list; symmetrizes, deduplicates, and
    /// drops self-loops.
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Matrix<f64>,
        labels: Vec<Option<u32>>,
        split: Vec<Split>,
        num_classes: usize,
    ) -> Result<Graph> {
        if features.rows() != num_nodes {
            return Err(Error::Data(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                num_nodes
            )));
        }
        if labels.len() != num_nodes || split.len() != num_nodes {
            return Err(Error::Data("label/split length must equal node count".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if let Some(c) = l {
                if *c as usize >= num_classes {
                    return Err(Error::Data(format!(
                        "node {i} has label {c} but num_classes is {num_classes}"
                    )));
                }
            }
        }
        let mut pairs = BTreeSet::new();
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Data(format!(
                    "edge ({u},{v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u != v {
                pairs.insert((u.min(v), u.max(v)));
            }
        }
        let mut triples = Vec::with_capacity(pairs.len() * 2);
        for (u, v) in pairs {
            triples.push((u, v, 1.0));
            triples.push((v, u, 1.0));
        }
        let adjacency = CsrMatrix::from_coo(num_nodes, num_nodes, triples)?;
        Ok(Graph {
            adjacency,
            features,
            labels,
            split,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Undirected edge count (each unordered pair once).
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }
}

/// Degrees of A itself (self-loops excluded), length N.
pub fn degree_vector(adjacency: &CsrMatrix<f64>) -> Vec<f64> {
    (0..adjacency.rows())
        .map(|i| adjacency.row_iter(i).map(|(_, v)| v).sum())
        .collect()
}

/// Ã = D^{-1/2}(A+I)D^{-1/2} with D taken from (A+I), so isolated nodes get
/// degree 1 and the result is always defined. Entry (i,j) is 1/√(d_i·d_j),
/// evaluated as one square root of the (commutative) degree product, which
/// makes the output bitwise symmetric and rounds only once per entry.
pub fn symmetric_renormalize(adjacency: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    let n = adjacency.rows();
    let deg: Vec<f64> = (0..n)
        .map(|i| adjacency.row_iter(i).map(|(_, v)| v).sum::<f64>() + 1.0)
        .collect();
    let mut triples = Vec::with_capacity(adjacency.nnz() + n);
    for i in 0..n {
        triples.push((i, i, 1.0 / deg[i]));
        for (j, _) in adjacency.row_iter(i) {
            if j != i {
                triples.push((i, j, 1.0 / (deg[i] * deg[j]).sqrt()));
            }
        }
    }
    CsrMatrix::from_coo(n, n, triples).expect("triples come from a valid matrix")
}

fn read_lines(dir: &Path, name: &str) -> Result<Vec<(usize, String)>> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

fn parse_usize(file: &str, line: usize, tok: &str, what: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::parse(file, line, format!("{what}: expected integer, got {tok:?}")))
}

/// Load a dataset bundle directory. Counts are validated against `meta.tsv`.
pub fn load_graph_bundle(dir: &Path) -> Result<Graph> {
    let mut num_nodes = None;
    let mut num_features = None;
    let mut num_classes = None;
    for (ln, line) in read_lines(dir, "meta.tsv")? {
        let mut it = line.split('\t');
        let key = it.next().unwrap_or_default();
        let val = it
            .next()
            .ok_or_else(|| Error::parse("meta.tsv", ln, "expected key<TAB>value"))?;
        match key {
            "num_nodes" => num_nodes = Some(parse_usize("meta.tsv", ln, val, "num_nodes")?),
            "num_features" => {
                num_features = Some(parse_usize("meta.tsv", ln, val, "num_features")?)
            }
            "num_classes" => num_classes = Some(parse_usize("meta.tsv", ln, val, "num_classes")?),
            _ => {} // unknown meta keys are informational
        }
    }
    let n = num_nodes.ok_or_else(|| Error::Data("meta.tsv is missing num_nodes".into()))?;
    let f = num_features.ok_or_else(|| Error::Data("meta.tsv is missing num_features".into()))?;
    let c = num_classes.ok_or_else(|| Error::Data("meta.tsv is missing num_classes".into()))?;

    let mut edges = Vec::new();
    for (ln, line) in read_lines(dir, "graph.tsv")? {
        let mut it = line.split('\t');
        let u = it
            .next()
            .ok_or_else(|| Error::parse("graph.tsv", ln, "expected u<TAB>v"))?;
        let v = it
            .next()
            .ok_or_else(|| Error::parse("graph.tsv", ln, "expected u<TAB>v"))?;
        // a third column (edge weight) may be present; unweighted training ignores it
        let u = parse_usize("graph.tsv", ln, u, "source id")?;
        let v = parse_usize("graph.tsv", ln, v, "target id")?;
        if u >= n || v >= n {
            return Err(Error::parse(
                "graph.tsv",
                ln,
                format!("edge ({u},{v}) outside 0..{n}"),
            ));
        }
        edges.push((u, v));
    }

    let feature_lines = read_lines(dir, "features.tsv")?;
    if feature_lines.len() != n {
        return Err(Error::Data(format!(
            "features.tsv has {} rows, meta.tsv says {n}",
            feature_lines.len()
        )));
    }
    let mut features = Matrix::zeros(n, f);
    for (i, (ln, line)) in feature_lines.into_iter().enumerate() {
        let row = features.row_mut(i);
        let mut count = 0;
        for (j, tok) in line.split('\t').enumerate() {
            if j >= f {
                count = j + 1;
                break;
            }
            row[j] = tok.parse().map_err(|_| {
                Error::parse("features.tsv", ln, format!("non-numeric value {tok:?}"))
            })?;
            count = j + 1;
        }
        if count != f {
            return Err(Error::parse(
                "features.tsv",
                ln,
                format!("row has {count} columns, expected {f}"),
            ));
        }
    }

    let labels = if dir.join("labels.tsv").exists() {
        let lines = read_lines(dir, "labels.tsv")?;
        if lines.len() != n {
            return Err(Error::Data(format!(
                "labels.tsv has {} rows, meta.tsv says {n}",
                lines.len()
            )));
        }
        let mut labels = Vec::with_capacity(n);
        for (ln, line) in lines {
            let v: i64 = line.trim().parse().map_err(|_| {
                Error::parse("labels.tsv", ln, format!("expected class id or -1, got {line:?}"))
            })?;
            labels.push(match v {
                -1 => None,
                x if x >= 0 && (x as usize) < c => Some(x as u32),
                _ => {
                    return Err(Error::parse(
                        "labels.tsv",
                        ln,
                        format!("label {v} outside 0..{c}"),
                    ))
                }
            });
        }
        labels
    } else {
        vec![None; n]
    };

    let split = if dir.join("split.tsv").exists() {
        let lines = read_lines(dir, "split.tsv")?;
        if lines.len() != n {
            return Err(Error::Data(format!(
                "split.tsv has {} rows, meta.tsv says {n}",
                lines.len()
            )));
        }
        lines
            .into_iter()
            .map(|(ln, line)| {
                Split::parse(line.trim()).ok_or_else(|| {
                    Error::parse("split.tsv", ln, format!("unknown split {line:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![Split::None; n]
    };

    Graph::new(n, &edges, features, labels, split, c)
}

/// Write a bundle directory (the inverse of [`load_graph_bundle`]).
pub fn save_graph_bundle(g: &Graph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))
    };

    let mut graph = String::new();
    for u in 0..g.num_nodes() {
        for (v, _) in g.adjacency.row_iter(u) {
            if u < v {
                graph.push_str(&format!("{u}\t{v}\n"));
            }
        }
    }
    write("graph.tsv", graph)?;

    let mut feats = String::new();
    for i in 0..g.num_nodes() {
        let row: Vec<String> = g.features.row(i).iter().map(|v| format!("{v}")).collect();
        feats.push_str(&row.join("\t"));
        feats.push('\n');
    }
    write("features.tsv", feats)?;

    let labels: String = g
        .labels
        .iter()
        .map(|l| match l {
            Some(c) => format!("{c}\n"),
            None => "-1\n".to_string(),
        })
        .collect();
    write("labels.tsv", labels)?;

    let split: String = g.split.iter().map(|s| format!("{s}\n")).collect();
    write("split.tsv", split)?;

    write(
        "meta.tsv",
        format!(
            "num_nodes\t{}\nnum_features\t{}\nnum_classes\t{}\n",
            g.num_nodes(),
            g.num_features(),
            g.num_classes
        ),
    )
}
