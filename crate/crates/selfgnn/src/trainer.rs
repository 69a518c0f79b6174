//! The Siamese training loop: view construction, student updates by
//! backprop, teacher updates by exponential moving average, and embedding
//! extraction.
//!
//! Per step the teacher encodes its view outside any tape (gradient flow to
//! it is blocked by construction), the student runs encoder → predictor on
//! the tape, the alignment loss pulls the prediction toward the teacher
//! output, Adam moves the student, and the teacher then tracks the student
//! as φ ← τφ + (1−τ)θ. Batch normalization inside both networks keeps the
//! objective from collapsing to a constant embedding.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{AdamState, LossMode, Mode, SparseHandle, Tape};
use crate::dense::Matrix;
use crate::diffusion::{DiffusionConfig, DiffusionKind};
use crate::error::{Error, Result};
use crate::eval::{logistic_probe, ProbeConfig};
use crate::features;
use crate::graph::{symmetric_renormalize, Graph, Split};
use crate::model::{
    encoder_eval, encoder_forward, init_params, mlp_eval, mlp_forward, stage_encoder, stage_mlp,
    Activation, EncoderParams, Features, MlpParams, ModelConfig, ModelParams,
};
use crate::rng::named_rng;
use crate::scalar::Scalar;

/// Which single augmentation produces the second view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugVariant {
    Ppr,
    Heat,
    Katz,
    Split,
    Standardize,
    Ldp,
    Paste,
}

impl AugVariant {
    pub fn parse(s: &str) -> Option<AugVariant> {
        match s {
            "ppr" => Some(AugVariant::Ppr),
            "heat" => Some(AugVariant::Heat),
            "katz" => Some(AugVariant::Katz),
            "split" => Some(AugVariant::Split),
            "standardize" => Some(AugVariant::Standardize),
            "ldp" => Some(AugVariant::Ldp),
            "paste" => Some(AugVariant::Paste),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AugVariant::Ppr => "ppr",
            AugVariant::Heat => "heat",
            AugVariant::Katz => "katz",
            AugVariant::Split => "split",
            AugVariant::Standardize => "standardize",
            AugVariant::Ldp => "ldp",
            AugVariant::Paste => "paste",
        }
    }

    /// The diffusion kind behind a topological variant, if it is one.
    pub fn diffusion_kind(self) -> Option<DiffusionKind> {
        match self {
            AugVariant::Ppr => Some(DiffusionKind::Ppr),
            AugVariant::Heat => Some(DiffusionKind::Heat),
            AugVariant::Katz => Some(DiffusionKind::Katz),
            _ => None,
        }
    }
}

/// One augmentation per run; the diffusion settings only matter for the
/// topological variants (the variant overrides `diffusion.kind`).
#[derive(Debug, Clone)]
pub struct AugSpec {
    pub variant: AugVariant,
    pub diffusion: DiffusionConfig,
}

impl AugSpec {
    pub fn new(variant: AugVariant) -> Self {
        AugSpec { variant, diffusion: DiffusionConfig::default() }
    }
}

/// Training hyperparameters plus the architecture they instantiate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    /// Teacher EMA decay; constant across the run.
    pub tau: f64,
    pub loss: LossMode,
    /// Also align student(View2) to teacher(View1) and average both
    /// directions; off by default.
    pub symmetrized: bool,
    pub seed: u64,
    /// Validation-probe period in epochs; 0 disables probing (the run then
    /// keeps the final parameters rather than a best-validation snapshot).
    pub eval_every: usize,
    pub layer_widths: Vec<usize>,
    pub predictor_hidden: usize,
    pub activation: Activation,
    pub projector: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            lr: 1e-4,
            dropout: 0.2,
            tau: 0.99,
            loss: LossMode::Matrix,
            symmetrized: false,
            seed: 1,
            eval_every: 25,
            layer_widths: crate::model::DEFAULT_LAYER_WIDTHS.to_vec(),
            predictor_hidden: crate::model::DEFAULT_PREDICTOR_HIDDEN,
            activation: Activation::Prelu,
            projector: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train: epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("train: tau must be in [0,1], got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "train: dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("train: lr must be finite and >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// One input to an encoder: a propagation operator and node features.
#[derive(Debug, Clone)]
pub struct View<F> {
    pub h: SparseHandle<F>,
    pub x: Features<F>,
}

/// The Siamese pair of views. The student sees the original topology; the
/// teacher sees the augmented one.
#[derive(Debug, Clone)]
pub struct Views<F> {
    pub student: View<F>,
    pub teacher: View<F>,
}

/// Append zero columns so `m` is `width` wide (used to reconcile the two
/// halves of an odd feature split; zero columns are inert under `X · W`).
fn pad_columns(m: Matrix<f64>, width: usize) -> Matrix<f64> {
    if m.cols() == width {
        return m;
    }
    Matrix::from_fn(m.rows(), width, |i, j| if j < m.cols() { m[(i, j)] } else { 0.0 })
}

/// Build the two training views in f64 and cast to the training precision.
///
/// Topological variants keep the features and swap the operator; feature
/// variants keep the renormalized adjacency and swap the features. Both
/// views always end up the same width so one encoder shape serves both
/// (the narrower half of an odd split is zero-padded).
pub fn make_views<F: Scalar>(g: &Graph, spec: &AugSpec) -> Result<Views<F>> {
    let a_hat = symmetric_renormalize(&g.adjacency);
    let x = g.features.clone();
    let (h1, x1, h2, x2) = match spec.variant {
        AugVariant::Ppr | AugVariant::Heat | AugVariant::Katz => {
            let mut dcfg = spec.diffusion.clone();
            dcfg.kind = spec.variant.diffusion_kind().expect("topological variant");
            let h2 = crate::diffusion::diffusion_operator(&g.adjacency, &dcfg)?;
            (a_hat.clone(), x.clone(), h2, x)
        }
        AugVariant::Split => {
            let (first, second) = features::split(&x)?;
            let width = first.matrix.cols();
            let padded = pad_columns(second.matrix, width);
            (a_hat.clone(), first.matrix, a_hat, padded)
        }
        AugVariant::Standardize => {
            let z = features::standardize(&x);
            (a_hat.clone(), x, a_hat, z.matrix)
        }
        AugVariant::Ldp => {
            let v = features::ldp_padded(g, g.num_features())?;
            (a_hat.clone(), x, a_hat, v.matrix)
        }
        AugVariant::Paste => {
            let (plain, pasted) = features::paste(&x, g);
            (a_hat.clone(), plain.matrix, a_hat, pasted.matrix)
        }
    };
    Ok(Views {
        student: View {
            h: SparseHandle::new(h1.cast::<F>()),
            x: Features::from_matrix(x1.cast::<F>()),
        },
        teacher: View {
            h: SparseHandle::new(h2.cast::<F>()),
            x: Features::from_matrix(x2.cast::<F>()),
        },
    })
}

fn ema_matrix<F: Scalar>(teacher: &mut Matrix<F>, student: &Matrix<F>, tau: f64) -> Result<()> {
    if teacher.shape() != student.shape() {
        return Err(Error::Shape(format!(
            "ema: teacher {:?} vs student {:?}",
            teacher.shape(),
            student.shape()
        )));
    }
    let t = F::from_f64_lossy(tau);
    let k = F::from_f64_lossy(1.0 - tau);
    for (tv, sv) in teacher.data_mut().iter_mut().zip(student.data()) {
        *tv = t * *tv + k * *sv;
    }
    Ok(())
}

/// φ ← τφ + (1−τ)θ over the learned encoder tensors (weights, batch-norm
/// scale/shift, activation slopes). Running batch-norm statistics are the
/// teacher's own and are not dragged.
pub fn ema_update<F: Scalar>(
    student: &EncoderParams<F>,
    teacher: &mut EncoderParams<F>,
    tau: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("ema: tau must be in [0,1], got {tau}")));
    }
    if student.layers.len() != teacher.layers.len() {
        return Err(Error::Shape("ema: encoder depth mismatch".into()));
    }
    for (s, t) in student.layers.iter().zip(&mut teacher.layers) {
        ema_matrix(&mut t.weight, &s.weight, tau)?;
        ema_matrix(&mut t.bn.gamma, &s.bn.gamma, tau)?;
        ema_matrix(&mut t.bn.beta, &s.bn.beta, tau)?;
        ema_matrix(&mut t.slope, &s.slope, tau)?;
    }
    Ok(())
}

/// EMA for a projection head (same rule as [`ema_update`]).
pub fn ema_update_mlp<F: Scalar>(
    student: &MlpParams<F>,
    teacher: &mut MlpParams<F>,
    tau: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("ema: tau must be in [0,1], got {tau}")));
    }
    ema_matrix(&mut teacher.linear1, &student.linear1, tau)?;
    ema_matrix(&mut teacher.bn.gamma, &student.bn.gamma, tau)?;
    ema_matrix(&mut teacher.bn.beta, &student.bn.beta, tau)?;
    ema_matrix(&mut teacher.slope, &student.slope, tau)?;
    ema_matrix(&mut teacher.linear2, &student.linear2, tau)?;
    Ok(())
}

/// Teacher output for one view: encoder (and projector, when enabled) with
/// batch statistics, no dropout, no tape.
fn teacher_target<F: Scalar>(model: &mut ModelParams<F>, view: &View<F>) -> Result<Matrix<F>> {
    let mut t = encoder_eval(&mut model.teacher, &view.h, &view.x, Mode::Train)?;
    if let Some(tp) = &mut model.teacher_projector {
        t = mlp_eval(tp, &t, Mode::Train)?;
    }
    Ok(t)
}

/// One optimization step: student backprop on `views.student` toward the
/// teacher's output on `views.teacher` (both directions when symmetrized),
/// then the EMA teacher update. Returns the loss value.
pub fn train_step<F: Scalar>(
    model: &mut ModelParams<F>,
    views: &Views<F>,
    opt: &mut AdamState<F>,
    cfg: &TrainConfig,
    dropout_rng: &mut ChaCha12Rng,
) -> Result<f64> {
    // Teacher targets first, outside the tape.
    let target2 = teacher_target(model, &views.teacher)?;
    let target1 = if cfg.symmetrized { Some(teacher_target(model, &views.student)?) } else { None };

    let mut tape: Tape<F> = Tape::new();
    let enc = stage_encoder(&mut tape, &model.student, true);
    let pred = stage_mlp(&mut tape, &model.predictor, true);
    let proj = model.student_projector.as_ref().map(|p| stage_mlp(&mut tape, p, true));

    let forward = |tape: &mut Tape<F>,
                       model: &mut ModelParams<F>,
                       view: &View<F>,
                       target: &Matrix<F>,
                       rng: &mut ChaCha12Rng|
     -> Result<crate::autodiff::Var> {
        let mut z = encoder_forward(
            tape,
            &mut model.student,
            &enc,
            &view.h,
            &view.x,
            Mode::Train,
            cfg.dropout,
            rng,
        )?;
        if let (Some(sp), Some(staged)) = (&mut model.student_projector, &proj) {
            z = mlp_forward(tape, sp, staged, z, Mode::Train)?;
        }
        let y = mlp_forward(tape, &mut model.predictor, &pred, z, Mode::Train)?;
        let t = tape.constant(target.clone());
        tape.cosine_mse_loss(y, t, cfg.loss)
    };

    let mut loss = forward(&mut tape, model, &views.student, &target2, dropout_rng)?;
    if let Some(t1) = &target1 {
        // Second direction on the same tape: gradients from both halves
        // accumulate into the same staged parameters.
        let back = forward(&mut tape, model, &views.teacher, t1, dropout_rng)?;
        let sum = tape.add(loss, back)?;
        loss = tape.scale(sum, F::from_f64_lossy(0.5))?;
    }
    let loss_value = tape.value(loss)[(0, 0)].to_f64_lossy();

    let grads = tape.backward(loss)?;
    let mut vars = enc.vars();
    vars.extend(pred.vars());
    if let Some(p) = &proj {
        vars.extend(p.vars());
    }
    let grad_refs: Vec<Option<&Matrix<F>>> = vars.iter().map(|v| grads.get(*v)).collect();
    let mut params = model.student.trainables();
    params.extend(model.predictor.trainables());
    if let Some(p) = &mut model.student_projector {
        params.extend(p.trainables());
    }
    opt.step(&mut params, &grad_refs)?;

    ema_update(&model.student, &mut model.teacher, cfg.tau)?;
    if let (Some(sp), Some(tp)) = (&model.student_projector, &mut model.teacher_projector) {
        ema_update_mlp(sp, tp, cfg.tau)?;
    }
    Ok(loss_value)
}

/// A training unit: the views of one (sub)graph plus the original node ids
/// its rows correspond to, for scattering embeddings back.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub nodes: Vec<usize>,
    pub views: Views<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    /// Parameters of the best validation probe, or of the final epoch when
    /// probing is disabled.
    pub params: ModelParams<F>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
}

/// Eval-mode student embeddings for every batch, scattered into an N×d
/// matrix by original node id. With `concat` the teacher's eval-mode view
/// of the second input is appended (N×2d).
pub fn embed_batches<F: Scalar>(
    model: &mut ModelParams<F>,
    batches: &[Batch<F>],
    num_nodes: usize,
    concat: bool,
) -> Result<Matrix<F>> {
    let d = model.student.output_width();
    let width = if concat { 2 * d } else { d };
    let mut out = Matrix::zeros(num_nodes, width);
    let mut seen = vec![false; num_nodes];
    for batch in batches {
        let s = encoder_eval(&mut model.student, &batch.views.student.h, &batch.views.student.x, Mode::Eval)?;
        let t = if concat {
            Some(encoder_eval(&mut model.teacher, &batch.views.teacher.h, &batch.views.teacher.x, Mode::Eval)?)
        } else {
            None
        };
        for (row, &node) in batch.nodes.iter().enumerate() {
            if node >= num_nodes || seen[node] {
                return Err(Error::Data("embed: batches must partition the node set".into()));
            }
            seen[node] = true;
            out.row_mut(node)[..d].copy_from_slice(&s.row(row)[..d]);
            if let Some(t) = &t {
                out.row_mut(node)[d..].copy_from_slice(&t.row(row)[..d]);
            }
        }
    }
    if seen.iter().any(|s| !*s) {
        return Err(Error::Data("embed: batches must cover the node set".into()));
    }
    Ok(out)
}

/// Embeddings for downstream tasks: eval-mode student on the first view
/// (default) or student‖teacher concatenation.
pub fn embed<F: Scalar>(model: &mut ModelParams<F>, views: &Views<F>, concat: bool) -> Result<Matrix<F>> {
    let n = views.student.x.rows();
    let batch = Batch { nodes: (0..n).collect(), views: views.clone() };
    embed_batches(model, &[batch], n, concat)
}

/// Linear-probe accuracy of current embeddings on the graph's val split.
fn validation_accuracy<F: Scalar>(
    g: &Graph,
    model: &mut ModelParams<F>,
    batches: &[Batch<F>],
    cfg: &TrainConfig,
) -> Result<f64> {
    let emb = embed_batches(model, batches, g.num_nodes(), false)?.cast::<f64>();
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for i in 0..g.num_nodes() {
        if g.labels[i].is_none() {
            continue;
        }
        match g.split[i] {
            Split::Train => train_idx.push(i),
            Split::Val => val_idx.push(i),
            _ => {}
        }
    }
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Data(
            "validation probing needs labeled train and val nodes (or set eval_every = 0)".into(),
        ));
    }
    let labels = |idx: &[usize]| -> Vec<u32> { idx.iter().map(|&i| g.labels[i].expect("labeled")).collect() };
    let probe = ProbeConfig { seed: cfg.seed, ..ProbeConfig::default() };
    logistic_probe(
        &emb.gather_rows(&train_idx),
        &labels(&train_idx),
        &emb.gather_rows(&val_idx),
        &labels(&val_idx),
        &probe,
    )
}

/// Core loop shared by full-graph and clustered training: epochs over
/// batches in seeded shuffled order, periodic validation probes, and
/// best-validation snapshotting.
pub fn train_on_batches<F: Scalar>(
    g: &Graph,
    batches: &[Batch<F>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    let first = batches
        .first()
        .ok_or_else(|| Error::Data("train: no batches".into()))?;
    let width = first.views.student.x.cols();
    for b in batches {
        if b.views.student.x.cols() != width || b.views.teacher.x.cols() != width {
            return Err(Error::Shape("train: batches disagree on feature width".into()));
        }
    }
    let mut mcfg = ModelConfig::new(width);
    mcfg.layer_widths = cfg.layer_widths.clone();
    mcfg.predictor_hidden = cfg.predictor_hidden;
    mcfg.activation = cfg.activation;
    mcfg.projector = cfg.projector;
    let mut model: ModelParams<F> = init_params(&mcfg, cfg.seed)?;
    let mut opt = AdamState::new(cfg.lr);
    let mut dropout_rng = named_rng(cfg.seed, "dropout");
    let mut order_rng = named_rng(cfg.seed, "batch-order");

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams<F>)> = None;
    let mut order: Vec<usize> = (0..batches.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for &bi in &order {
            let loss = train_step(&mut model, &batches[bi].views, &mut opt, cfg, &mut dropout_rng)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
            loss_sum += loss;
        }
        let loss = loss_sum / batches.len() as f64;
        let val_acc = if cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            Some(validation_accuracy(g, &mut model, batches, cfg)?)
        } else {
            None
        };
        if let Some(acc) = val_acc {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, model.clone()));
            }
        }
        history.push(EpochRecord { epoch, loss, val_acc });
    }
    Ok(match best {
        Some((acc, epoch, params)) => TrainOutcome {
            params,
            history,
            best_epoch: Some(epoch),
            best_val: Some(acc),
        },
        None => TrainOutcome { params: model, history, best_epoch: None, best_val: None },
    })
}

/// Full-batch training of one augmentation on one graph.
pub fn train<F: Scalar>(g: &Graph, spec: &AugSpec, cfg: &TrainConfig) -> Result<TrainOutcome<F>> {
    let views = make_views::<F>(g, spec)?;
    let batch = Batch { nodes: (0..g.num_nodes()).collect(), views };
    train_on_batches(g, &[batch], cfg)
}
