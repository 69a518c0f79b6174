//! Topology augmentation by graph diffusion: personalized PageRank,
//! heat-kernel, and Katz-index operators, each computed either by a dense
//! direct solve or an iterative series, then sparsified into a propagation
//! operator.
//!
//! Every dense buffer materialized here is registered with an allocation
//! counter so callers (notably clustered training) can assert that peak
//! diffusion memory scales with the subgraph, not the whole graph.

use crate::dense::{lu_solve, Matrix};
use crate::error::{Error, Result};
use crate::graph::symmetric_renormalize;
use crate::sparse::CsrMatrix;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Dense solves refuse graphs above this many nodes; use the iterative
/// solver (bounded-memory blocked accumulation) or clustered training.
pub const DENSE_NODE_LIMIT: usize = 20_000;

/// Per-buffer element budget for the blocked iterative path (~32 MB of f64).
const BLOCK_ELEMS: usize = 4_000_000;

static ALLOC_CURRENT: AtomicUsize = AtomicUsize::new(0);
static ALLOC_PEAK: AtomicUsize = AtomicUsize::new(0);

/// Counts f64 elements of dense buffers currently live inside diffusion
/// routines; drops decrement. `peak` is monotone until `reset_peak`.
struct TrackedAlloc(usize);

impl TrackedAlloc {
    fn new(elems: usize) -> TrackedAlloc {
        let cur = ALLOC_CURRENT.fetch_add(elems, Ordering::SeqCst) + elems;
        ALLOC_PEAK.fetch_max(cur, Ordering::SeqCst);
        TrackedAlloc(elems)
    }
}

impl Drop for TrackedAlloc {
    fn drop(&mut self) {
        ALLOC_CURRENT.fetch_sub(self.0, Ordering::SeqCst);
    }
}

pub fn reset_alloc_peak() {
    ALLOC_PEAK.store(ALLOC_CURRENT.load(Ordering::SeqCst), Ordering::SeqCst);
}

/// Peak dense element count inside diffusion since the last reset.
pub fn alloc_peak() -> usize {
    ALLOC_PEAK.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffusionKind {
    Ppr,
    Heat,
    Katz,
}

impl DiffusionKind {
    pub fn parse(s: &str) -> Option<DiffusionKind> {
        match s {
            "ppr" => Some(DiffusionKind::Ppr),
            "heat" => Some(DiffusionKind::Heat),
            "katz" => Some(DiffusionKind::Katz),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DiffusionKind::Ppr => "ppr",
            DiffusionKind::Heat => "heat",
            DiffusionKind::Katz => "katz",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Dense,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sparsify {
    /// Keep every nonzero of the dense result.
    None,
    /// Keep entries with |h| >= epsilon.
    Epsilon(f64),
    /// Keep the k largest entries per row; ties go to the lower column.
    TopK(usize),
}

/// What to do with zero-degree nodes under the heat kernel (their column of
/// A·D⁻¹ is taken as zero, so they diffuse nothing).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsolatedPolicy {
    Zero,
    Reject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionConfig {
    pub kind: DiffusionKind,
    /// Teleport probability for PPR, in (0, 1].
    pub alpha: f64,
    /// Diffusion time for the heat kernel, >= 0.
    pub t: f64,
    /// Decay for Katz, in [0, 1) so the series converges.
    pub beta: f64,
    pub solver: Solver,
    /// Series truncation threshold (max-abs of the added term, or the
    /// heat-kernel coefficient).
    pub tol: f64,
    pub max_terms: usize,
    pub sparsify: Sparsify,
    pub isolated: IsolatedPolicy,
    /// Symmetrically renormalize the sparsified operator by its row sums.
    pub renormalize_after: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            kind: DiffusionKind::Ppr,
            alpha: 0.15,
            t: 3.0,
            beta: 0.1,
            solver: Solver::Iterative,
            tol: 1e-9,
            max_terms: 1000,
            sparsify: Sparsify::Epsilon(1e-4),
            isolated: IsolatedPolicy::Zero,
            renormalize_after: false,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "diffusion.alpha must be in (0,1], got {}",
                self.alpha
            )));
        }
        if !(self.t >= 0.0) {
            return Err(Error::Config(format!(
                "diffusion.t must be >= 0, got {}",
                self.t
            )));
        }
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!(
                "diffusion.beta must be in [0,1), got {}",
                self.beta
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!(
                "diffusion.tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_terms < 1 {
            return Err(Error::Config("diffusion.max_terms must be >= 1".into()));
        }
        match self.sparsify {
            Sparsify::Epsilon(e) if !(e > 0.0) => {
                return Err(Error::Config(format!(
                    "diffusion.sparsify epsilon must be > 0, got {e}"
                )))
            }
            Sparsify::TopK(k) if k < 1 => {
                return Err(Error::Config("diffusion.sparsify top_k must be >= 1".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

fn check_dense_limit(n: usize) -> Result<()> {
    if n > DENSE_NODE_LIMIT {
        return Err(Error::Data(format!(
            "dense diffusion refuses {n} nodes (limit {DENSE_NODE_LIMIT}); \
             use the iterative solver or clustered training"
        )));
    }
    Ok(())
}

/// Column-normalized adjacency A·D⁻¹ used by the heat kernel. Columns of
/// zero-degree nodes are zero (they have no rows in A either); `Reject`
/// makes that an error when t > 0.
fn column_normalized(adjacency: &CsrMatrix<f64>, cfg: &DiffusionConfig) -> Result<CsrMatrix<f64>> {
    let n = adjacency.rows();
    let deg: Vec<f64> = (0..n)
        .map(|i| adjacency.row_iter(i).map(|(_, v)| v).sum())
        .collect();
    if cfg.isolated == IsolatedPolicy::Reject && cfg.t > 0.0 {
        if let Some(i) = deg.iter().position(|&d| d == 0.0) {
            return Err(Error::Data(format!(
                "heat kernel with t>0 on zero-degree node {i} (isolated policy is reject)"
            )));
        }
    }
    let mut p = adjacency.clone();
    // entry (i,j) becomes A[i,j]/deg[j]; adjacency is symmetric so every
    // stored column j belongs to a node with deg[j] >= 1
    let cols: Vec<u32> = p.col_idx().to_vec();
    for (v, c) in p.values_mut().iter_mut().zip(cols) {
        *v /= deg[c as usize];
    }
    Ok(p)
}

/// H = α(I − (1−α)Ã)⁻¹, dense or by the Neumann series
/// α·Σ_{k≥0}(1−α)^k·Ã^k truncated when a term's max-abs drops below tol.
pub fn ppr_diffusion(a_tilde: &CsrMatrix<f64>, cfg: &DiffusionConfig) -> Result<Matrix<f64>> {
    cfg.validate()?;
    let n = a_tilde.rows();
    match cfg.solver {
        Solver::Dense => {
            check_dense_limit(n)?;
            let _t1 = TrackedAlloc::new(n * n);
            let mut m = a_tilde.densify();
            m.scale(-(1.0 - cfg.alpha));
            for i in 0..n {
                m[(i, i)] += 1.0;
            }
            let _t2 = TrackedAlloc::new(n * n);
            let mut rhs = Matrix::zeros(n, n);
            for i in 0..n {
                rhs[(i, i)] = cfg.alpha;
            }
            lu_solve(m, rhs)
        }
        Solver::Iterative => {
            check_dense_limit(n)?;
            let _t1 = TrackedAlloc::new(n * n);
            let mut term = Matrix::zeros(n, n);
            for i in 0..n {
                term[(i, i)] = cfg.alpha;
            }
            let _t2 = TrackedAlloc::new(n * n);
            let mut acc = term.clone();
            for _ in 0..cfg.max_terms {
                term = a_tilde.spmm(&term)?;
                term.scale(1.0 - cfg.alpha);
                acc.add_assign(&term);
                if term.max_abs() < cfg.tol {
                    return Ok(acc);
                }
            }
            Err(Error::Numeric(format!(
                "ppr series did not reach tol {} within {} terms",
                cfg.tol, cfg.max_terms
            )))
        }
    }
}

/// H = exp(t·A·D⁻¹ − t) = e⁻ᵗ·Σ_k tᵏ(A·D⁻¹)ᵏ/k!, truncated when the next
/// coefficient e⁻ᵗ·tᵏ/k! falls below tol (capped at max_terms).
pub fn heat_kernel_diffusion(
    adjacency: &CsrMatrix<f64>,
    cfg: &DiffusionConfig,
) -> Result<Matrix<f64>> {
    cfg.validate()?;
    let n = adjacency.rows();
    check_dense_limit(n)?;
    let p = column_normalized(adjacency, cfg)?;
    let coeffs = heat_coefficients(cfg);
    let _t1 = TrackedAlloc::new(n * n);
    let mut term = Matrix::identity(n);
    let _t2 = TrackedAlloc::new(n * n);
    let mut acc = term.clone();
    acc.scale(coeffs[0]);
    for &c in &coeffs[1..] {
        term = p.spmm(&term)?;
        acc.axpy(c, &term);
    }
    Ok(acc)
}

/// Coefficients e⁻ᵗ·tᵏ/k! for k = 0..=K with K per the truncation rule.
fn heat_coefficients(cfg: &DiffusionConfig) -> Vec<f64> {
    let mut coeffs = vec![(-cfg.t).exp()];
    while coeffs.len() < cfg.max_terms {
        let k = coeffs.len() as f64;
        let next = coeffs.last().unwrap() * cfg.t / k;
        if next < cfg.tol {
            break;
        }
        coeffs.push(next);
    }
    coeffs
}

/// H = (I − βÃ)⁻¹βÃ, dense or by the series Σ_{k≥1}(βÃ)ᵏ truncated when a
/// term's max-abs drops below tol.
pub fn katz_diffusion(a_tilde: &CsrMatrix<f64>, cfg: &DiffusionConfig) -> Result<Matrix<f64>> {
    cfg.validate()?;
    let n = a_tilde.rows();
    check_dense_limit(n)?;
    if cfg.beta == 0.0 {
        return Ok(Matrix::zeros(n, n));
    }
    match cfg.solver {
        Solver::Dense => {
            let _t1 = TrackedAlloc::new(n * n);
            let mut rhs = a_tilde.densify();
            rhs.scale(cfg.beta);
            let _t2 = TrackedAlloc::new(n * n);
            let mut m = rhs.clone();
            m.scale(-1.0);
            for i in 0..n {
                m[(i, i)] += 1.0;
            }
            lu_solve(m, rhs)
        }
        Solver::Iterative => {
            let _t1 = TrackedAlloc::new(n * n);
            let mut term = a_tilde.densify();
            term.scale(cfg.beta);
            let _t2 = TrackedAlloc::new(n * n);
            let mut acc = term.clone();
            for _ in 0..cfg.max_terms {
                if term.max_abs() < cfg.tol {
                    return Ok(acc);
                }
                term = a_tilde.spmm(&term)?;
                term.scale(cfg.beta);
                acc.add_assign(&term);
            }
            if term.max_abs() < cfg.tol {
                Ok(acc)
            } else {
                Err(Error::Numeric(format!(
                    "katz series did not reach tol {} within {} terms",
                    cfg.tol, cfg.max_terms
                )))
            }
        }
    }
}

/// Select the kept (column, value) pairs of one dense row.
fn sparsify_row(row: &[f64], mode: Sparsify, out: &mut Vec<(usize, f64)>) {
    out.clear();
    match mode {
        Sparsify::None => {
            out.extend(
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| (j, *v)),
            );
        }
        Sparsify::Epsilon(eps) => {
            out.extend(
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| v.abs() >= eps)
                    .map(|(j, v)| (j, *v)),
            );
        }
        Sparsify::TopK(k) => {
            let mut order: Vec<usize> = (0..row.len()).collect();
            // descending by value, then ascending column for ties
            order.sort_by(|&a, &b| {
                row[b]
                    .partial_cmp(&row[a])
                    .expect("finite diffusion values")
                    .then(a.cmp(&b))
            });
            order.truncate(k);
            order.sort_unstable();
            out.extend(order.into_iter().filter(|&j| row[j] != 0.0).map(|j| (j, row[j])));
        }
    }
}

/// Sparsify a dense diffusion matrix per the config rule.
pub fn sparsify(h: &Matrix<f64>, cfg: &DiffusionConfig) -> Result<CsrMatrix<f64>> {
    cfg.validate()?;
    let (rows, cols) = h.shape();
    let mut triples = Vec::new();
    let mut kept = Vec::new();
    for i in 0..rows {
        sparsify_row(h.row(i), cfg.sparsify, &mut kept);
        triples.extend(kept.iter().map(|&(j, v)| (i, j, v)));
    }
    CsrMatrix::from_coo(rows, cols, triples)
}

/// S ↦ D^{-1/2}·S·D^{-1/2} with D the row sums of S; used when the config
/// asks for a renormalized propagation operator.
fn renormalize_by_row_sums(s: &CsrMatrix<f64>) -> Result<CsrMatrix<f64>> {
    let n = s.rows();
    let sums: Vec<f64> = (0..n)
        .map(|i| s.row_iter(i).map(|(_, v)| v).sum())
        .collect();
    if let Some(i) = sums.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Numeric(format!(
            "renormalize_after requires positive row sums; row {i} sums to {}",
            sums[i]
        )));
    }
    let mut out = s.clone();
    let mut k = 0;
    for i in 0..n {
        let span = s.row_ptr()[i + 1] - s.row_ptr()[i];
        for _ in 0..span {
            let j = s.col_idx()[k] as usize;
            out.values_mut()[k] /= (sums[i] * sums[j]).sqrt();
            k += 1;
        }
    }
    Ok(out)
}

/// End-to-end topology augmentation: build the propagation base (Ã, or
/// A·D⁻¹ for the heat kernel), run the configured diffusion, sparsify, and
/// optionally renormalize. The iterative solver streams column blocks so
/// memory stays at O(N·block) instead of O(N²), which is what makes graphs
/// beyond the dense limit (and clustered batches) workable.
pub fn diffusion_operator(
    adjacency: &CsrMatrix<f64>,
    cfg: &DiffusionConfig,
) -> Result<CsrMatrix<f64>> {
    cfg.validate()?;
    let n = adjacency.rows();
    let sparse = match cfg.solver {
        Solver::Dense => {
            let h = match cfg.kind {
                DiffusionKind::Ppr => ppr_diffusion(&symmetric_renormalize(adjacency), cfg)?,
                DiffusionKind::Heat => heat_kernel_diffusion(adjacency, cfg)?,
                DiffusionKind::Katz => katz_diffusion(&symmetric_renormalize(adjacency), cfg)?,
            };
            sparsify(&h, cfg)?
        }
        Solver::Iterative => blocked_operator(adjacency, cfg, n)?,
    };
    if cfg.renormalize_after {
        renormalize_by_row_sums(&sparse)
    } else {
        Ok(sparse)
    }
}

/// Iterative path of [`diffusion_operator`]: computes H in column blocks.
///
/// For PPR/Katz the base Ã is symmetric, so a column block Ã^k·I[:,B] read
/// transposed is exactly the row block H[B,:]. For the heat kernel the same
/// trick runs on (A·D⁻¹)ᵀ. Each block is sparsified row-by-row as it
/// finishes, so only O(N·block) dense elements are ever live.
fn blocked_operator(
    adjacency: &CsrMatrix<f64>,
    cfg: &DiffusionConfig,
    n: usize,
) -> Result<CsrMatrix<f64>> {
    enum Series {
        Geometric { ratio: f64, first: f64, skip_identity: bool },
        Coefficients(Vec<f64>),
    }
    let (base, series) = match cfg.kind {
        DiffusionKind::Ppr => (
            symmetric_renormalize(adjacency),
            Series::Geometric {
                ratio: 1.0 - cfg.alpha,
                first: cfg.alpha,
                skip_identity: false,
            },
        ),
        DiffusionKind::Katz => (
            symmetric_renormalize(adjacency),
            Series::Geometric {
                ratio: cfg.beta,
                first: cfg.beta,
                skip_identity: true,
            },
        ),
        DiffusionKind::Heat => (
            column_normalized(adjacency, cfg)?.transpose(),
            Series::Coefficients(heat_coefficients(cfg)),
        ),
    };
    let width = (BLOCK_ELEMS / n.max(1)).clamp(1, n.max(1));
    let mut triples = Vec::new();
    let mut kept = Vec::new();
    let mut start = 0;
    while start < n {
        let w = width.min(n - start);
        let _t1 = TrackedAlloc::new(n * w);
        let mut term = Matrix::zeros(n, w);
        for (c, node) in (start..start + w).enumerate() {
            term[(node, c)] = 1.0;
        }
        let _t2 = TrackedAlloc::new(n * w);
        let mut acc = Matrix::zeros(n, w);
        match &series {
            Series::Geometric {
                ratio,
                first,
                skip_identity,
            } => {
                if *skip_identity {
                    // Katz starts at k=1: term becomes βÃ·I[:,B]
                    term = base.spmm(&term)?;
                    term.scale(*first);
                } else {
                    term.scale(*first);
                }
                acc.add_assign(&term);
                let mut converged = term.max_abs() < cfg.tol || *ratio == 0.0;
                let mut used = 0;
                while !converged {
                    if used >= cfg.max_terms {
                        return Err(Error::Numeric(format!(
                            "{} series did not reach tol {} within {} terms",
                            cfg.kind.name(),
                            cfg.tol,
                            cfg.max_terms
                        )));
                    }
                    term = base.spmm(&term)?;
                    term.scale(*ratio);
                    acc.add_assign(&term);
                    converged = term.max_abs() < cfg.tol;
                    used += 1;
                }
            }
            Series::Coefficients(coeffs) => {
                acc.axpy(coeffs[0], &term);
                for &c in &coeffs[1..] {
                    term = base.spmm(&term)?;
                    acc.axpy(c, &term);
                }
            }
        }
        // column c of acc is row (start+c) of H
        for c in 0..w {
            let row: Vec<f64> = (0..n).map(|r| acc[(r, c)]).collect();
            sparsify_row(&row, cfg.sparsify, &mut kept);
            triples.extend(kept.iter().map(|&(j, v)| (start + c, j, v)));
        }
        start += w;
    }
    CsrMatrix::from_coo(n, n, triples)
}
