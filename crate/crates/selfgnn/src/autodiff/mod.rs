//! Reverse-mode automatic differentiation over dense 2-D tensors, covering
//! exactly the operations the graph encoder, predictor, and alignment loss
//! need. Values live on a [`Tape`]; [`Var`] is a copyable handle. `backward`
//! walks the recorded ops once in reverse and accumulates gradients only
//! into nodes that require them — a constant (e.g. the teacher's output)
//! never gets a gradient buffer, which is how the stop-gradient contract is
//! enforced rather than merely checked.

mod adam;

pub use adam::AdamState;

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;
use rand::Rng;
use std::sync::Arc;

/// Train/eval switch shared by batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Loss reduction: one cosine over the flattened matrices, or the mean of
/// per-row cosines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Matrix,
    PerNode,
}

impl LossMode {
    pub fn parse(s: &str) -> Option<LossMode> {
        match s {
            "matrix" => Some(LossMode::Matrix),
            "per_node" => Some(LossMode::PerNode),
            _ => None,
        }
    }
}

/// Batch normalization state: learned scale/shift plus running statistics.
/// The learned parts enter the tape as leaves each step; the running parts
/// are updated in place by train-mode forwards and read by eval forwards.
#[derive(Debug, Clone)]
pub struct BatchNormState<F> {
    pub gamma: Matrix<F>,
    pub beta: Matrix<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<F: Scalar> BatchNormState<F> {
    pub fn new(width: usize) -> Self {
        BatchNormState {
            gamma: Matrix::from_vec(1, width, vec![F::one(); width]),
            beta: Matrix::zeros(1, width),
            running_mean: vec![F::zero(); width],
            running_var: vec![F::one(); width],
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.cols()
    }

    pub fn cast<G: Scalar>(&self) -> BatchNormState<G> {
        BatchNormState {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.iter().map(|v| G::from_f64_lossy(v.to_f64_lossy())).collect(),
            running_var: self.running_var.iter().map(|v| G::from_f64_lossy(v.to_f64_lossy())).collect(),
            epsilon: self.epsilon,
            momentum: self.momentum,
        }
    }
}

/// A sparse matrix fixed during differentiation (propagation operator or
/// constant feature matrix), with its transpose precomputed for backward.
#[derive(Debug, Clone)]
pub struct SparseHandle<F> {
    mat: Arc<CsrMatrix<F>>,
    tr: Arc<CsrMatrix<F>>,
}

impl<F: Scalar> SparseHandle<F> {
    pub fn new(m: CsrMatrix<F>) -> Self {
        let tr = Arc::new(m.transpose());
        SparseHandle {
            mat: Arc::new(m),
            tr,
        }
    }

    pub fn matrix(&self) -> &CsrMatrix<F> {
        &self.mat
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Matmul {
        a: Var,
        b: Var,
    },
    SpmmFixed {
        /// Transpose of the fixed matrix; all backward needs.
        st: Arc<CsrMatrix<F>>,
        x: Var,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    Prelu {
        x: Var,
        slope: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        /// Normalized input (batch statistics in train mode, running in eval).
        x_hat: Matrix<F>,
        inv_std: Vec<F>,
        train: bool,
    },
    Dropout {
        x: Var,
        /// 0 for dropped entries, 1/(1-p) for kept ones.
        mask: Vec<F>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: F,
    },
    WeightedSum {
        x: Var,
        w: Matrix<F>,
    },
    CosineMse {
        p: Var,
        z: Var,
        mode: LossMode,
        /// Per-row (dot, ‖p‖, ‖z‖) in per-node mode; one global triple in
        /// matrix mode.
        stats: Vec<(f64, f64, f64)>,
    },
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::SpmmFixed { .. } => "spmm_fixed",
            Op::AddBias { .. } => "add_bias",
            Op::Relu { .. } => "relu",
            Op::Prelu { .. } => "prelu",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Dropout { .. } => "dropout",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::CosineMse { .. } => "cosine_mse_loss",
        }
    }
}

struct Node<F> {
    value: Matrix<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`]. Nodes that
/// were never reached (constants, stop-gradient inputs) report `None`.
pub struct Gradients<F> {
    grads: Vec<Option<Matrix<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Matrix<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Trainable input: gradients will be accumulated for it.
    pub fn leaf(&mut self, value: Matrix<F>) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Non-trainable input: backward never touches it.
    pub fn constant(&mut self, value: Matrix<F>) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<F> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_unchecked(&mut self, value: Matrix<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix<F>, op: Op<F>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite values after {}",
                op.name()
            )));
        }
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let req = self.requires(a) || self.requires(b);
        self.push(value, Op::Matmul { a, b }, req)
    }

    /// Product with a fixed sparse matrix; the gradient flows only to `x`
    /// (through Sᵀ). Serves both H·X propagation and the sparse-features
    /// X·W product (gradient to the dense weight).
    pub fn spmm_fixed(&mut self, s: &SparseHandle<F>, x: Var) -> Result<Var> {
        let value = s.mat.spmm(self.value(x))?;
        let req = self.requires(x);
        self.push(
            value,
            Op::SpmmFixed {
                st: s.tr.clone(),
                x,
            },
            req,
        )
    }

    /// Row-broadcast addition of a 1×f bias.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "add_bias: bias {}x{} against {}x{}",
                bv.rows(),
                bv.cols(),
                xv.rows(),
                xv.cols()
            )));
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (o, bb) in value.row_mut(i).iter_mut().zip(bv.row(0)) {
                *o = *o + *bb;
            }
        }
        let req = self.requires(x) || self.requires(b);
        self.push(value, Op::AddBias { x, b }, req)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(F::zero()));
        let req = self.requires(x);
        self.push(value, Op::Relu { x }, req)
    }

    /// Leaky activation with one learned slope (1×1 tensor) shared across
    /// the whole tensor: y = x for x > 0, a·x otherwise.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let sv = self.value(slope);
        if sv.shape() != (1, 1) {
            return Err(Error::Shape("prelu slope must be 1x1".into()));
        }
        let a = sv[(0, 0)];
        let value = self.value(x).map(|v| if v > F::zero() { v } else { a * v });
        let req = self.requires(x) || self.requires(slope);
        self.push(value, Op::Prelu { x, slope }, req)
    }

    /// Batch normalization. Train mode normalizes by batch statistics and
    /// updates `state`'s running statistics in place (r ← (1−m)·r + m·batch);
    /// eval mode normalizes by the running statistics. `gamma`/`beta` are
    /// tape vars so the optimizer sees their gradients; backward goes through
    /// the batch mean and variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<F>,
        mode: Mode,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (n, f) = xv.shape();
        if f != state.width() {
            return Err(Error::Shape(format!(
                "batch_norm: width {f} vs state width {}",
                state.width()
            )));
        }
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::Data(format!(
                        "batch_norm train mode needs at least 2 rows, got {n}"
                    )));
                }
                let mut mean = vec![F::zero(); f];
                for i in 0..n {
                    for (m, v) in mean.iter_mut().zip(xv.row(i)) {
                        *m = *m + *v;
                    }
                }
                let inv_n = F::from_f64_lossy(1.0 / n as f64);
                for m in &mut mean {
                    *m = *m * inv_n;
                }
                let mut var = vec![F::zero(); f];
                for i in 0..n {
                    for ((s, m), v) in var.iter_mut().zip(&mean).zip(xv.row(i)) {
                        let d = *v - *m;
                        *s = *s + d * d;
                    }
                }
                for s in &mut var {
                    *s = *s * inv_n;
                }
                let m = F::from_f64_lossy(state.momentum);
                let km = F::one() - m;
                for ((r, b), (rv, bv)) in state
                    .running_mean
                    .iter_mut()
                    .zip(&mean)
                    .zip(state.running_var.iter_mut().zip(&var))
                {
                    *r = km * *r + m * *b;
                    *rv = km * *rv + m * *bv;
                }
                (mean, var)
            }
            Mode::Eval => (state.running_mean.clone(), state.running_var.clone()),
        };
        let eps = F::from_f64_lossy(state.epsilon);
        let inv_std: Vec<F> = var.iter().map(|v| F::one() / (*v + eps).sqrt()).collect();
        let mut x_hat = Matrix::zeros(n, f);
        for i in 0..n {
            let src = xv.row(i);
            let dst = x_hat.row_mut(i);
            for j in 0..f {
                dst[j] = (src[j] - mean[j]) * inv_std[j];
            }
        }
        let gv = self.value(gamma);
        let bv = self.value(beta);
        if gv.cols() != f || bv.cols() != f {
            return Err(Error::Shape("batch_norm: gamma/beta width mismatch".into()));
        }
        let mut value = Matrix::zeros(n, f);
        for i in 0..n {
            let xh = x_hat.row(i);
            let dst = value.row_mut(i);
            for j in 0..f {
                dst[j] = gv[(0, j)] * xh[j] + bv[(0, j)];
            }
        }
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                train: mode == Mode::Train,
            },
            req,
        )
    }

    /// Inverted dropout: each entry is zeroed with probability p and
    /// survivors are scaled by 1/(1−p); eval mode (and p = 0) is the
    /// identity. The mask is drawn from `rng` and reused by backward.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout p must be in [0,1), got {p}")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = F::from_f64_lossy(1.0 / (1.0 - p));
        let xv = self.value(x);
        let mask: Vec<F> = (0..xv.rows() * xv.cols())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    F::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let mut value = xv.clone();
        for (v, m) in value.data_mut().iter_mut().zip(&mask) {
            *v = *v * *m;
        }
        let req = self.requires(x);
        self.push(value, Op::Dropout { x, mask }, req)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape("add: shape mismatch".into()));
        }
        let mut value = av.clone();
        value.add_assign(bv);
        let req = self.requires(a) || self.requires(b);
        self.push(value, Op::Add { a, b }, req)
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        let mut value = self.value(x).clone();
        value.scale(c);
        let req = self.requires(x);
        self.push(value, Op::Scale { x, c }, req)
    }

    /// Σ wᵢⱼ·xᵢⱼ as a 1×1 tensor; the workhorse for reducing an arbitrary
    /// op output to a scalar in gradient checks.
    pub fn weighted_sum(&mut self, x: Var, w: Matrix<F>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != w.shape() {
            return Err(Error::Shape("weighted_sum: shape mismatch".into()));
        }
        let s = xv.frobenius_dot(&w);
        let req = self.requires(x);
        self.push(
            Matrix::from_vec(1, 1, vec![s]),
            Op::WeightedSum { x, w },
            req,
        )
    }

    /// L = 2 − 2·⟨p, z⟩/(‖p‖·‖z‖), over flattened matrices (`Matrix` mode)
    /// or averaged over rows (`PerNode`). The gradient flows to `p` only —
    /// `z` is on the stop-gradient side and is never written to, even if it
    /// nominally requires gradients.
    pub fn cosine_mse_loss(&mut self, p: Var, z: Var, mode: LossMode) -> Result<Var> {
        let pv = self.value(p);
        let zv = self.value(z);
        if pv.shape() != zv.shape() {
            return Err(Error::Shape(format!(
                "cosine_mse_loss: {}x{} vs {}x{}",
                pv.rows(),
                pv.cols(),
                zv.rows(),
                zv.cols()
            )));
        }
        let mut stats = Vec::new();
        let loss = match mode {
            LossMode::Matrix => {
                let dot = pv.frobenius_dot(zv).to_f64_lossy();
                let np = pv.frobenius_norm().to_f64_lossy();
                let nz = zv.frobenius_norm().to_f64_lossy();
                if np == 0.0 || nz == 0.0 {
                    return Err(Error::Numeric(
                        "cosine_mse_loss: zero-norm input".into(),
                    ));
                }
                stats.push((dot, np, nz));
                2.0 - 2.0 * dot / (np * nz)
            }
            LossMode::PerNode => {
                let n = pv.rows();
                let mut acc = 0.0;
                for i in 0..n {
                    let (pr, zr) = (pv.row(i), zv.row(i));
                    let dot: f64 = pr
                        .iter()
                        .zip(zr)
                        .map(|(a, b)| (*a * *b).to_f64_lossy())
                        .sum();
                    let np = pr
                        .iter()
                        .map(|v| (*v * *v).to_f64_lossy())
                        .sum::<f64>()
                        .sqrt();
                    let nz = zr
                        .iter()
                        .map(|v| (*v * *v).to_f64_lossy())
                        .sum::<f64>()
                        .sqrt();
                    if np == 0.0 || nz == 0.0 {
                        return Err(Error::Numeric(format!(
                            "cosine_mse_loss: zero-norm row {i}"
                        )));
                    }
                    stats.push((dot, np, nz));
                    acc += 2.0 - 2.0 * dot / (np * nz);
                }
                acc / n as f64
            }
        };
        let req = self.requires(p);
        self.push(
            Matrix::from_vec(1, 1, vec![F::from_f64_lossy(loss)]),
            Op::CosineMse { p, z, mode, stats },
            req,
        )
    }

    /// Reverse pass from a 1×1 loss node. Each op is visited once; gradient
    /// buffers are allocated only for nodes on a path from a gradient-
    /// requiring leaf to the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape("backward: loss must be 1x1".into()));
        }
        let mut grads: Vec<Option<Matrix<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.requires(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![F::one()]));
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.accumulate(idx, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    /// Scatter the output gradient `dy` of node `idx` into its inputs.
    fn accumulate(&self, idx: usize, dy: &Matrix<F>, grads: &mut [Option<Matrix<F>>]) -> Result<()> {
        let add_to = |v: Var, contrib: Matrix<F>, grads: &mut [Option<Matrix<F>>]| {
            if !self.requires(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(g) => g.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                if self.requires(*a) {
                    let da = dy.matmul_a_bt(self.value(*b))?;
                    add_to(*a, da, grads);
                }
                if self.requires(*b) {
                    let db = self.value(*a).matmul_at_b(dy)?;
                    add_to(*b, db, grads);
                }
            }
            Op::SpmmFixed { st, x } => {
                if self.requires(*x) {
                    add_to(*x, st.spmm(dy)?, grads);
                }
            }
            Op::AddBias { x, b } => {
                add_to(*x, dy.clone(), grads);
                if self.requires(*b) {
                    add_to(*b, Matrix::from_vec(1, dy.cols(), dy.col_sums()), grads);
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let mut dx = dy.clone();
                for (d, v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    if !(*v > F::zero()) {
                        *d = F::zero();
                    }
                }
                add_to(*x, dx, grads);
            }
            Op::Prelu { x, slope } => {
                let xv = self.value(*x);
                let a = self.value(*slope)[(0, 0)];
                if self.requires(*x) {
                    let mut dx = dy.clone();
                    for (d, v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if !(*v > F::zero()) {
                            *d = *d * a;
                        }
                    }
                    add_to(*x, dx, grads);
                }
                if self.requires(*slope) {
                    let da: F = dy
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(d, v)| if *v > F::zero() { F::zero() } else { *d * *v })
                        .sum();
                    add_to(*slope, Matrix::from_vec(1, 1, vec![da]), grads);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                train,
            } => {
                let (n, f) = dy.shape();
                if self.requires(*beta) {
                    add_to(*beta, Matrix::from_vec(1, f, dy.col_sums()), grads);
                }
                if self.requires(*gamma) {
                    let mut dg = vec![F::zero(); f];
                    for i in 0..n {
                        for ((g, d), xh) in dg.iter_mut().zip(dy.row(i)).zip(x_hat.row(i)) {
                            *g = *g + *d * *xh;
                        }
                    }
                    add_to(*gamma, Matrix::from_vec(1, f, dg), grads);
                }
                if self.requires(*x) {
                    let gv = self.value(*gamma);
                    // dx̂ = dy ⊙ γ
                    let mut dxh = dy.clone();
                    for i in 0..n {
                        for (d, g) in dxh.row_mut(i).iter_mut().zip(gv.row(0)) {
                            *d = *d * *g;
                        }
                    }
                    let dx = if *train {
                        // dx = (inv_std/n)·(n·dx̂ − Σdx̂ − x̂·Σ(dx̂⊙x̂)),
                        // column-wise; the μ and σ² paths folded in
                        let mut sum_dxh = vec![F::zero(); f];
                        let mut sum_dxh_xh = vec![F::zero(); f];
                        for i in 0..n {
                            for ((s, sx), (d, xh)) in sum_dxh
                                .iter_mut()
                                .zip(sum_dxh_xh.iter_mut())
                                .zip(dxh.row(i).iter().zip(x_hat.row(i)))
                            {
                                *s = *s + *d;
                                *sx = *sx + *d * *xh;
                            }
                        }
                        let inv_n = F::from_f64_lossy(1.0 / n as f64);
                        let nf = F::from_f64_lossy(n as f64);
                        let mut dx = Matrix::zeros(n, f);
                        for i in 0..n {
                            let dst = dx.row_mut(i);
                            let dr = dxh.row(i);
                            let xh = x_hat.row(i);
                            for j in 0..f {
                                dst[j] = inv_std[j]
                                    * inv_n
                                    * (nf * dr[j] - sum_dxh[j] - xh[j] * sum_dxh_xh[j]);
                            }
                        }
                        dx
                    } else {
                        // eval mode: statistics are constants
                        let mut dx = dxh;
                        for i in 0..n {
                            for (d, s) in dx.row_mut(i).iter_mut().zip(inv_std) {
                                *d = *d * *s;
                            }
                        }
                        dx
                    };
                    add_to(*x, dx, grads);
                }
            }
            Op::Dropout { x, mask } => {
                let mut dx = dy.clone();
                for (d, m) in dx.data_mut().iter_mut().zip(mask) {
                    *d = *d * *m;
                }
                add_to(*x, dx, grads);
            }
            Op::Add { a, b } => {
                add_to(*a, dy.clone(), grads);
                add_to(*b, dy.clone(), grads);
            }
            Op::Scale { x, c } => {
                let mut dx = dy.clone();
                dx.scale(*c);
                add_to(*x, dx, grads);
            }
            Op::WeightedSum { x, w } => {
                let mut dx = w.clone();
                dx.scale(dy[(0, 0)]);
                add_to(*x, dx, grads);
            }
            Op::CosineMse { p, z, mode, stats } => {
                // gradient only w.r.t. p; z sits behind the stop-gradient
                if self.requires(*p) {
                    let g = dy[(0, 0)].to_f64_lossy();
                    let pv = self.value(*p);
                    let zv = self.value(*z);
                    let (n, f) = pv.shape();
                    let mut dp = Matrix::zeros(n, f);
                    match mode {
                        LossMode::Matrix => {
                            let (dot, np, nz) = stats[0];
                            let cz = g * -2.0 / (np * nz);
                            let cp = g * 2.0 * dot / (np * np * np * nz);
                            for i in 0..n {
                                let dst = dp.row_mut(i);
                                let (pr, zr) = (pv.row(i), zv.row(i));
                                for j in 0..f {
                                    dst[j] = F::from_f64_lossy(
                                        cz * zr[j].to_f64_lossy() + cp * pr[j].to_f64_lossy(),
                                    );
                                }
                            }
                        }
                        LossMode::PerNode => {
                            let inv_n = 1.0 / n as f64;
                            for i in 0..n {
                                let (dot, np, nz) = stats[i];
                                let cz = g * inv_n * -2.0 / (np * nz);
                                let cp = g * inv_n * 2.0 * dot / (np * np * np * nz);
                                let dst = dp.row_mut(i);
                                let (pr, zr) = (pv.row(i), zv.row(i));
                                for j in 0..f {
                                    dst[j] = F::from_f64_lossy(
                                        cz * zr[j].to_f64_lossy() + cp * pr[j].to_f64_lossy(),
                                    );
                                }
                            }
                        }
                    }
                    add_to(*p, dp, grads);
                }
            }
        }
        Ok(())
    }
}

/// Finite-difference utilities shared by the unit tests and the acceptance
/// suite's gradient checks.
pub mod check {
    use crate::dense::Matrix;

    /// Central difference dF/dx per entry: (f(x+h·e) − f(x−h·e)) / 2h.
    pub fn central_diff(
        f: &mut dyn FnMut(&Matrix<f64>) -> f64,
        x: &Matrix<f64>,
        h: f64,
    ) -> Matrix<f64> {
        let mut grad = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let mut plus = x.clone();
                plus[(i, j)] += h;
                let mut minus = x.clone();
                minus[(i, j)] -= h;
                grad[(i, j)] = (f(&plus) - f(&minus)) / (2.0 * h);
            }
        }
        grad
    }

    /// max over entries of |a−b| / max(1, |a|, |b|).
    pub fn max_relative_error(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
            .fold(0.0, f64::max)
    }
}
