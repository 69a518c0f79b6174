//! The Siamese pair: a graph-convolution encoder shared in shape between
//! student and teacher, the student-only prediction head, and an optional
//! projection head for ablations.
//!
//! Each encoder layer computes `dropout(act(batch_norm(H · X · W)))` where
//! `H` is whatever propagation operator the caller fixed (renormalized
//! adjacency or a sparsified diffusion matrix) — the layer touches `H` only
//! through [`Tape::spmm_fixed`], so swapping operators never changes the
//! model code. Convolution weights carry no bias; batch norm's β plays that
//! role.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

use crate::autodiff::{BatchNormState, Mode, SparseHandle, Tape, Var};
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::rng::named_rng;
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// Encoder layer widths used when none are configured.
pub const DEFAULT_LAYER_WIDTHS: [usize; 2] = [512, 128];
/// Hidden width of the prediction head (mirrors the first encoder layer).
pub const DEFAULT_PREDICTOR_HIDDEN: usize = 512;
/// Initial slope of learnable PReLU activations.
const PRELU_INIT: f64 = 0.25;
/// Feature matrices at or below this fill ratio take the sparse multiply
/// path in the first encoder layer.
const SPARSE_FEATURE_FILL: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Learnable leaky slope, initialized to 0.25.
    Prelu,
    /// Plain rectifier; the slope parameter is carried but unused.
    Relu,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "prelu" => Some(Activation::Prelu),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Prelu => "prelu",
            Activation::Relu => "relu",
        }
    }
}

/// Architecture description; widths chain input → layers → embedding.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub input_width: usize,
    pub layer_widths: Vec<usize>,
    pub predictor_hidden: usize,
    pub activation: Activation,
    /// When set, a projection head (same shape as the predictor) sits
    /// between each encoder and the loss; off by default.
    pub projector: bool,
}

impl ModelConfig {
    pub fn new(input_width: usize) -> Self {
        ModelConfig {
            input_width,
            layer_widths: DEFAULT_LAYER_WIDTHS.to_vec(),
            predictor_hidden: DEFAULT_PREDICTOR_HIDDEN,
            activation: Activation::Prelu,
            projector: false,
        }
    }

    /// Width of the final encoder layer (the embedding dimension).
    pub fn embedding_width(&self) -> usize {
        *self.layer_widths.last().expect("validated non-empty")
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            return Err(Error::Config("model: input width must be positive".into()));
        }
        if self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
            return Err(Error::Config(
                "model: layer widths must be a non-empty list of positive sizes".into(),
            ));
        }
        if self.predictor_hidden == 0 {
            return Err(Error::Config("model: predictor hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// One convolution layer: weight, batch-norm state, activation slope.
#[derive(Debug, Clone)]
pub struct ConvLayer<F> {
    /// fan-in × fan-out.
    pub weight: Matrix<F>,
    pub bn: BatchNormState<F>,
    /// 1×1 PReLU slope.
    pub slope: Matrix<F>,
}

#[derive(Debug, Clone)]
pub struct EncoderParams<F> {
    pub layers: Vec<ConvLayer<F>>,
    pub activation: Activation,
}

/// A two-linear head (`Linear → BatchNorm → act → Linear`), used for both
/// the predictor and the optional projector.
#[derive(Debug, Clone)]
pub struct MlpParams<F> {
    /// d × h.
    pub linear1: Matrix<F>,
    pub bn: BatchNormState<F>,
    /// 1×1 PReLU slope.
    pub slope: Matrix<F>,
    /// h × d.
    pub linear2: Matrix<F>,
    pub activation: Activation,
}

/// Everything trainable: student θ (encoder + predictor + optional
/// projector) and teacher φ (encoder + optional projector, no predictor).
#[derive(Debug, Clone)]
pub struct ModelParams<F> {
    pub student: EncoderParams<F>,
    pub predictor: MlpParams<F>,
    pub student_projector: Option<MlpParams<F>>,
    pub teacher: EncoderParams<F>,
    pub teacher_projector: Option<MlpParams<F>>,
}

/// Glorot-uniform draw, U(−l, l) with l = √(6/(fan_in+fan_out)). Sampling
/// happens in f64 regardless of F so f32 and f64 runs share structure.
fn glorot<F: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| F::from_f64_lossy(rng.gen_range(-limit..limit)))
}

fn prelu_slope<F: Scalar>() -> Matrix<F> {
    Matrix::from_vec(1, 1, vec![F::from_f64_lossy(PRELU_INIT)])
}

fn init_mlp<F: Scalar>(d: usize, h: usize, activation: Activation, rng: &mut impl Rng) -> MlpParams<F> {
    MlpParams {
        linear1: glorot(d, h, rng),
        bn: BatchNormState::new(h),
        slope: prelu_slope(),
        linear2: glorot(h, d, rng),
        activation,
    }
}

/// Initialize a full parameter set from the "init" substream of `seed`.
/// The teacher starts as an exact copy of the student encoder (and
/// projector, when enabled).
pub fn init_params<F: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<F>> {
    cfg.validate()?;
    let mut rng = named_rng(seed, "init");
    let mut layers = Vec::with_capacity(cfg.layer_widths.len());
    let mut fan_in = cfg.input_width;
    for &width in &cfg.layer_widths {
        layers.push(ConvLayer {
            weight: glorot(fan_in, width, &mut rng),
            bn: BatchNormState::new(width),
            slope: prelu_slope(),
        });
        fan_in = width;
    }
    let student = EncoderParams { layers, activation: cfg.activation };
    let d = cfg.embedding_width();
    let predictor = init_mlp(d, cfg.predictor_hidden, cfg.activation, &mut rng);
    let student_projector = if cfg.projector {
        Some(init_mlp(d, cfg.predictor_hidden, cfg.activation, &mut rng))
    } else {
        None
    };
    let teacher = student.clone();
    let teacher_projector = student_projector.clone();
    Ok(ModelParams { student, predictor, student_projector, teacher, teacher_projector })
}

impl<F: Scalar> EncoderParams<F> {
    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    /// Trainable tensors in canonical order (per layer: weight, γ, β,
    /// slope). Must stay aligned with [`StagedEncoder::vars`].
    pub fn trainables(&mut self) -> Vec<&mut Matrix<F>> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bn.gamma);
            out.push(&mut layer.bn.beta);
            out.push(&mut layer.slope);
        }
        out
    }

    pub fn cast<G: Scalar>(&self) -> EncoderParams<G> {
        EncoderParams {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    weight: l.weight.cast(),
                    bn: l.bn.cast(),
                    slope: l.slope.cast(),
                })
                .collect(),
            activation: self.activation,
        }
    }
}

impl<F: Scalar> MlpParams<F> {
    /// Canonical order: linear1, γ, β, slope, linear2. Must stay aligned
    /// with [`StagedMlp::vars`].
    pub fn trainables(&mut self) -> Vec<&mut Matrix<F>> {
        vec![
            &mut self.linear1,
            &mut self.bn.gamma,
            &mut self.bn.beta,
            &mut self.slope,
            &mut self.linear2,
        ]
    }

    pub fn cast<G: Scalar>(&self) -> MlpParams<G> {
        MlpParams {
            linear1: self.linear1.cast(),
            bn: self.bn.cast(),
            slope: self.slope.cast(),
            linear2: self.linear2.cast(),
            activation: self.activation,
        }
    }
}

impl<F: Scalar> ModelParams<F> {
    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            student: self.student.cast(),
            predictor: self.predictor.cast(),
            student_projector: self.student_projector.as_ref().map(|p| p.cast()),
            teacher: self.teacher.cast(),
            teacher_projector: self.teacher_projector.as_ref().map(|p| p.cast()),
        }
    }
}

/// Node features entering the first layer. They are constants for
/// differentiation either way; sparse storage only changes the cost of the
/// `X · W` multiply (decisive for high-dimensional bag-of-words inputs).
#[derive(Debug, Clone)]
pub enum Features<F> {
    Dense(Matrix<F>),
    Sparse(SparseHandle<F>),
}

impl<F: Scalar> Features<F> {
    /// Wrap a dense matrix, switching to sparse storage when at most a
    /// quarter of the entries are non-zero. The rule depends only on the
    /// data, so a given input always takes the same path.
    pub fn from_matrix(m: Matrix<F>) -> Features<F> {
        let total = m.rows() * m.cols();
        let nnz = m.data().iter().filter(|v| !v.is_zero()).count();
        if total > 0 && (nnz as f64) <= SPARSE_FEATURE_FILL * total as f64 {
            Features::Sparse(SparseHandle::new(CsrMatrix::from_dense(&m)))
        } else {
            Features::Dense(m)
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Features::Dense(m) => m.rows(),
            Features::Sparse(s) => s.matrix().rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Features::Dense(m) => m.cols(),
            Features::Sparse(s) => s.matrix().cols(),
        }
    }

    pub fn to_dense(&self) -> Matrix<F> {
        match self {
            Features::Dense(m) => m.clone(),
            Features::Sparse(s) => s.matrix().densify(),
        }
    }
}

/// Tape handles for one staged convolution layer.
#[derive(Debug, Clone, Copy)]
pub struct StagedConv {
    pub weight: Var,
    pub gamma: Var,
    pub beta: Var,
    pub slope: Var,
}

/// Tape handles for a staged encoder; order mirrors
/// [`EncoderParams::trainables`].
#[derive(Debug, Clone)]
pub struct StagedEncoder {
    pub layers: Vec<StagedConv>,
}

impl StagedEncoder {
    pub fn vars(&self) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight, l.gamma, l.beta, l.slope])
            .collect()
    }
}

/// Tape handles for a staged two-linear head; order mirrors
/// [`MlpParams::trainables`].
#[derive(Debug, Clone, Copy)]
pub struct StagedMlp {
    pub linear1: Var,
    pub gamma: Var,
    pub beta: Var,
    pub slope: Var,
    pub linear2: Var,
}

impl StagedMlp {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.linear1, self.gamma, self.beta, self.slope, self.linear2]
    }
}

/// Put an encoder's tensors on the tape. `trainable` decides between
/// gradient-carrying leaves (student) and constants (teacher, inference).
pub fn stage_encoder<F: Scalar>(tape: &mut Tape<F>, enc: &EncoderParams<F>, trainable: bool) -> StagedEncoder {
    let mut stage = |m: &Matrix<F>| if trainable { tape.leaf(m.clone()) } else { tape.constant(m.clone()) };
    let layers = enc
        .layers
        .iter()
        .map(|l| StagedConv {
            weight: stage(&l.weight),
            gamma: stage(&l.bn.gamma),
            beta: stage(&l.bn.beta),
            slope: stage(&l.slope),
        })
        .collect();
    StagedEncoder { layers }
}

pub fn stage_mlp<F: Scalar>(tape: &mut Tape<F>, mlp: &MlpParams<F>, trainable: bool) -> StagedMlp {
    let mut stage = |m: &Matrix<F>| if trainable { tape.leaf(m.clone()) } else { tape.constant(m.clone()) };
    StagedMlp {
        linear1: stage(&mlp.linear1),
        gamma: stage(&mlp.bn.gamma),
        beta: stage(&mlp.bn.beta),
        slope: stage(&mlp.slope),
        linear2: stage(&mlp.linear2),
    }
}

fn activate<F: Scalar>(tape: &mut Tape<F>, activation: Activation, x: Var, slope: Var) -> Result<Var> {
    match activation {
        Activation::Prelu => tape.prelu(x, slope),
        Activation::Relu => tape.relu(x),
    }
}

/// Run the encoder on the tape: per layer `H · (input · W)`, batch norm,
/// activation, dropout. `mode` drives both batch-norm statistics (batch
/// vs running) and dropout (active vs identity); running statistics in
/// `enc` are updated in place on train-mode passes.
#[allow(clippy::too_many_arguments)]
pub fn encoder_forward<F: Scalar>(
    tape: &mut Tape<F>,
    enc: &mut EncoderParams<F>,
    staged: &StagedEncoder,
    h: &SparseHandle<F>,
    x: &Features<F>,
    mode: Mode,
    dropout: f64,
    rng: &mut impl Rng,
) -> Result<Var> {
    if enc.layers.is_empty() {
        return Err(Error::Config("encoder has no layers".into()));
    }
    if x.cols() != enc.input_width() {
        return Err(Error::Shape(format!(
            "encoder expects {} input features, got {}",
            enc.input_width(),
            x.cols()
        )));
    }
    let mut cur: Option<Var> = None;
    for (layer, vars) in enc.layers.iter_mut().zip(&staged.layers) {
        let xw = match (cur, &x) {
            // First layer: multiply the constant feature matrix by W on
            // whichever path matches its storage.
            (None, Features::Sparse(s)) => tape.spmm_fixed(s, vars.weight)?,
            (None, Features::Dense(m)) => {
                let c = tape.constant(m.clone());
                tape.matmul(c, vars.weight)?
            }
            (Some(prev), _) => tape.matmul(prev, vars.weight)?,
        };
        let conv = tape.spmm_fixed(h, xw)?;
        let normed = tape.batch_norm(conv, vars.gamma, vars.beta, &mut layer.bn, mode)?;
        let act = activate(tape, enc.activation, normed, vars.slope)?;
        cur = Some(tape.dropout(act, dropout, mode, rng)?);
    }
    Ok(cur.expect("at least one layer"))
}

/// Run a two-linear head on the tape: `Linear → BatchNorm → act → Linear`.
/// No dropout; running statistics update in place on train-mode passes.
pub fn mlp_forward<F: Scalar>(
    tape: &mut Tape<F>,
    mlp: &mut MlpParams<F>,
    staged: &StagedMlp,
    z: Var,
    mode: Mode,
) -> Result<Var> {
    let hidden = tape.matmul(z, staged.linear1)?;
    let normed = tape.batch_norm(hidden, staged.gamma, staged.beta, &mut mlp.bn, mode)?;
    let act = activate(tape, mlp.activation, normed, staged.slope)?;
    tape.matmul(act, staged.linear2)
}

/// Gradient-free encoder pass on a scratch tape, sharing the exact
/// arithmetic of [`encoder_forward`]. Dropout is off; `bn_mode` picks batch
/// statistics (the teacher's training-time behaviour, which also advances
/// its running statistics) or running statistics (deterministic inference).
pub fn encoder_eval<F: Scalar>(
    enc: &mut EncoderParams<F>,
    h: &SparseHandle<F>,
    x: &Features<F>,
    bn_mode: Mode,
) -> Result<Matrix<F>> {
    let mut tape = Tape::new();
    let staged = stage_encoder(&mut tape, enc, false);
    // Dropout is 0, so this generator is never consulted.
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let out = encoder_forward(&mut tape, enc, &staged, h, x, bn_mode, 0.0, &mut rng)?;
    Ok(tape.value(out).clone())
}

/// Gradient-free head pass on a scratch tape (teacher-side projector).
pub fn mlp_eval<F: Scalar>(mlp: &mut MlpParams<F>, z: &Matrix<F>, bn_mode: Mode) -> Result<Matrix<F>> {
    let mut tape = Tape::new();
    let staged = stage_mlp(&mut tape, mlp, false);
    let zv = tape.constant(z.clone());
    let out = mlp_forward(&mut tape, mlp, &staged, zv, bn_mode)?;
    Ok(tape.value(out).clone())
}
