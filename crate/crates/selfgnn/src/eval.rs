//! Downstream evaluation: stratified splits, a linear (softmax-regression)
//! probe over frozen embeddings, k-fold cross-validation, and collapse
//! diagnostics.
//!
//! Two probe protocols are reported side by side: train-split → test-split
//! accuracy, and stratified k-fold cross-validation over all labeled nodes.
//! Probes always run in f64 regardless of the training precision.

use rand::seq::SliceRandom;

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::Split;
use crate::rng::named_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// L2 penalty on the weights (the bias row is not penalized).
    pub l2: f64,
    pub max_iters: usize,
    pub lr: f64,
    /// Stop when the objective improves by less than this between sweeps.
    pub tol: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { l2: 1e-4, max_iters: 500, lr: 0.1, tol: 1e-7, folds: 5, seed: 0 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l2 < 0.0 || !self.l2.is_finite() {
            return Err(Error::Config("probe: l2 penalty must be a finite non-negative".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("probe: folds must be at least 2".into()));
        }
        if self.lr <= 0.0 || self.max_iters == 0 {
            return Err(Error::Config("probe: lr and max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Assign every labeled node to train/val/test with per-class proportions
/// (train gets the rounding remainder); unlabeled nodes get `Split::None`.
/// Fractions must sum to at most 1.
pub fn stratified_split(
    labels: &[Option<u32>],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<Split>> {
    let (ftr, fva, fte) = fractions;
    if !(ftr > 0.0 && fva >= 0.0 && fte >= 0.0 && ftr + fva + fte <= 1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "stratified_split: bad fractions ({ftr}, {fva}, {fte})"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            let c = *c as usize;
            if by_class.len() <= c {
                by_class.resize(c + 1, Vec::new());
            }
            by_class[c].push(i);
        }
    }
    let mut rng = named_rng(seed, "stratified-split");
    let mut out = vec![Split::None; labels.len()];
    for (c, nodes) in by_class.iter_mut().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        if nodes.len() < 3 {
            return Err(Error::Data(format!(
                "stratified_split: class {c} has only {} labeled nodes (need 3)",
                nodes.len()
            )));
        }
        nodes.shuffle(&mut rng);
        let n = nodes.len();
        // Round the val/test counts and give the remainder to train; this
        // keeps every class's train share within one node of its fraction.
        let n_val = (fva * n as f64).round() as usize;
        let n_test = ((fte * n as f64).round() as usize).min(n - n_val);
        let n_train = n - n_val - n_test;
        for (j, &node) in nodes.iter().enumerate() {
            out[node] = if j < n_train {
                Split::Train
            } else if j < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

/// Per-column standardization parameters fit on the training fold.
struct ZScore {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl ZScore {
    fn fit(x: &Matrix<f64>) -> ZScore {
        let (n, f) = x.shape();
        let mut mean = vec![0.0; f];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; f];
        for i in 0..n {
            for ((s, m), v) in var.iter_mut().zip(&mean).zip(x.row(i)) {
                let d = v - m;
                *s += d * d;
            }
        }
        let inv_std = var
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 { 1.0 / sd } else { 0.0 }
            })
            .collect();
        ZScore { mean, inv_std }
    }

    fn apply(&self, x: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            (x[(i, j)] - self.mean[j]) * self.inv_std[j]
        })
    }
}

/// Multinomial softmax regression trained full-batch: returns (weights with
/// trailing bias row, class count). `init` is zeros in normal use; the
/// convexity test injects random starts.
fn fit_softmax(
    x: &Matrix<f64>,
    labels: &[u32],
    num_classes: usize,
    cfg: &ProbeConfig,
    init: Option<Matrix<f64>>,
) -> Result<Matrix<f64>> {
    let (n, d) = x.shape();
    let c = num_classes;
    let mut w = init.unwrap_or_else(|| Matrix::zeros(d + 1, c));
    if w.shape() != (d + 1, c) {
        return Err(Error::Shape("probe: bad init shape".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut prev_obj = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        // Forward: logits, row-wise softmax (max-shifted), objective.
        let mut grad = Matrix::zeros(d + 1, c);
        let mut obj = 0.0;
        for i in 0..n {
            let xi = x.row(i);
            let mut logits = vec![0.0; c];
            for (k, l) in logits.iter_mut().enumerate() {
                let mut s = w[(d, k)];
                for (j, v) in xi.iter().enumerate() {
                    s += v * w[(j, k)];
                }
                *l = s;
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for l in &mut logits {
                *l = (*l - max).exp();
                z += *l;
            }
            let y = labels[i] as usize;
            obj -= (logits[y] / z).ln() * inv_n;
            for (k, l) in logits.iter().enumerate() {
                let p = l / z - if k == y { 1.0 } else { 0.0 };
                let pk = p * inv_n;
                for (j, v) in xi.iter().enumerate() {
                    grad[(j, k)] += pk * v;
                }
                grad[(d, k)] += pk;
            }
        }
        // L2 on the weight rows only.
        for j in 0..d {
            for k in 0..c {
                obj += 0.5 * cfg.l2 * w[(j, k)] * w[(j, k)];
                grad[(j, k)] += cfg.l2 * w[(j, k)];
            }
        }
        if !obj.is_finite() {
            return Err(Error::Numeric("probe objective became non-finite".into()));
        }
        for (wv, gv) in w.data_mut().iter_mut().zip(grad.data()) {
            *wv -= cfg.lr * gv;
        }
        if (prev_obj - obj).abs() < cfg.tol {
            break;
        }
        prev_obj = obj;
    }
    Ok(w)
}

fn predict(x: &Matrix<f64>, w: &Matrix<f64>) -> Vec<u32> {
    let (n, d) = x.shape();
    let c = w.cols();
    (0..n)
        .map(|i| {
            let xi = x.row(i);
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for k in 0..c {
                let mut s = w[(d, k)];
                for (j, v) in xi.iter().enumerate() {
                    s += v * w[(j, k)];
                }
                // Strict comparison: ties resolve to the lowest class id.
                if s > best_score {
                    best_score = s;
                    best = k;
                }
            }
            best as u32
        })
        .collect()
}

fn probe_with_init(
    train_emb: &Matrix<f64>,
    train_labels: &[u32],
    test_emb: &Matrix<f64>,
    test_labels: &[u32],
    cfg: &ProbeConfig,
    init: Option<Matrix<f64>>,
) -> Result<f64> {
    cfg.validate()?;
    if train_emb.rows() != train_labels.len() || test_emb.rows() != test_labels.len() {
        return Err(Error::Shape("probe: embedding/label row mismatch".into()));
    }
    if train_emb.cols() != test_emb.cols() {
        return Err(Error::Shape("probe: train/test width mismatch".into()));
    }
    let num_classes = match train_labels.iter().max() {
        Some(m) => *m as usize + 1,
        None => return Err(Error::Data("probe: empty training set".into())),
    };
    let distinct = {
        let mut seen = vec![false; num_classes];
        for &l in train_labels {
            seen[l as usize] = true;
        }
        seen.iter().filter(|s| **s).count()
    };
    if distinct < 2 {
        return Err(Error::Data("probe: training set has a single class".into()));
    }
    let scaler = ZScore::fit(train_emb);
    let w = fit_softmax(&scaler.apply(train_emb), train_labels, num_classes, cfg, init)?;
    let pred = predict(&scaler.apply(test_emb), &w);
    let correct = pred.iter().zip(test_labels).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / test_labels.len().max(1) as f64)
}

/// Train a linear probe on `(train_emb, train_labels)` and report accuracy
/// on `(test_emb, test_labels)`. Embeddings are z-scored with statistics
/// fit on the training fold.
pub fn logistic_probe(
    train_emb: &Matrix<f64>,
    train_labels: &[u32],
    test_emb: &Matrix<f64>,
    test_labels: &[u32],
    cfg: &ProbeConfig,
) -> Result<f64> {
    probe_with_init(train_emb, train_labels, test_emb, test_labels, cfg, None)
}

fn gather(emb: &Matrix<f64>, idx: &[usize]) -> Matrix<f64> {
    Matrix::from_fn(idx.len(), emb.cols(), |i, j| emb[(idx[i], j)])
}

fn gather_labels(labels: &[Option<u32>], idx: &[usize]) -> Vec<u32> {
    idx.iter().map(|&i| labels[i].expect("labeled")).collect()
}

/// Stratified k-fold cross-validation of the probe over all labeled nodes:
/// returns the mean and population standard deviation of fold accuracies.
pub fn kfold_accuracy(
    emb: &Matrix<f64>,
    labels: &[Option<u32>],
    cfg: &ProbeConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    if emb.rows() != labels.len() {
        return Err(Error::Shape("kfold: embedding/label row mismatch".into()));
    }
    let mut by_class: Vec<Vec<usize>> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            let c = *c as usize;
            if by_class.len() <= c {
                by_class.resize(c + 1, Vec::new());
            }
            by_class[c].push(i);
        }
    }
    let k = cfg.folds;
    let mut rng = named_rng(cfg.seed, "kfold");
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (c, nodes) in by_class.iter_mut().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        if nodes.len() < k {
            return Err(Error::Data(format!(
                "kfold: class {c} has {} labeled nodes, fewer than {k} folds",
                nodes.len()
            )));
        }
        nodes.shuffle(&mut rng);
        for (j, &node) in nodes.iter().enumerate() {
            folds[j % k].push(node);
        }
    }
    let mut accs = Vec::with_capacity(k);
    for held in 0..k {
        let test_idx = &folds[held];
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != held)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let acc = logistic_probe(
            &gather(emb, &train_idx),
            &gather_labels(labels, &train_idx),
            &gather(emb, test_idx),
            &gather_labels(labels, test_idx),
            cfg,
        )?;
        accs.push(acc);
    }
    let mean = accs.iter().sum::<f64>() / k as f64;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / k as f64;
    Ok((mean, var.sqrt()))
}

/// Collapse diagnostics for an embedding matrix.
#[derive(Debug, Clone)]
pub struct CollapseMetrics {
    /// Population standard deviation of each embedding dimension.
    pub per_dim_std: Vec<f64>,
    /// Mean of `per_dim_std`; a collapsed (constant-point) embedding scores 0.
    pub mean_std: f64,
    /// exp(entropy) of the normalized singular-value distribution; 1 for a
    /// rank-one embedding, up to d for an isotropic one, 0 for all-zeros.
    pub effective_rank: f64,
}

/// Per-dimension spread and effective rank of the embedding.
pub fn collapse_metrics(emb: &Matrix<f64>) -> Result<CollapseMetrics> {
    let (n, d) = emb.shape();
    if n < 2 {
        return Err(Error::Data("collapse_metrics: need at least 2 rows".into()));
    }
    let mut per_dim_std = Vec::with_capacity(d);
    for j in 0..d {
        let mean = (0..n).map(|i| emb[(i, j)]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (emb[(i, j)] - mean).powi(2)).sum::<f64>() / n as f64;
        per_dim_std.push(var.sqrt());
    }
    let mean_std = per_dim_std.iter().sum::<f64>() / d.max(1) as f64;
    // Singular values via the d×d Gram matrix (d is small: 128 by default).
    let gram = emb.matmul_at_b(emb)?;
    let eigs = crate::dense::sym_eigenvalues(&gram)?;
    // Numerically-zero eigenvalues carry solver noise that the square root
    // would amplify, so cut relative to the largest eigenvalue first.
    let cutoff = eigs.first().copied().unwrap_or(0.0).max(0.0) * 1e-10;
    let sigma: Vec<f64> = eigs
        .iter()
        .filter(|e| **e > cutoff && **e > 0.0)
        .map(|e| e.sqrt())
        .collect();
    let total: f64 = sigma.iter().sum();
    let effective_rank = if total > 0.0 {
        let entropy: f64 = sigma
            .iter()
            .map(|s| {
                let p = s / total;
                -p * p.ln()
            })
            .sum();
        entropy.exp()
    } else {
        0.0
    };
    Ok(CollapseMetrics { per_dim_std, mean_std, effective_rank })
}
