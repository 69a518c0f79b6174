//! Run configuration: a flat `key = value` text format plus the resolved
//! snapshot written into every output directory.
//!
//! Lines are `key = value`; `#` starts a comment; dotted keys address the
//! nested knobs (`diffusion.alpha = 0.15`, `probe.folds = 5`). Every key is
//! checked against the schema — a typo is a hard error, not a silent
//! default. Later assignments override earlier ones, which is how CLI
//! flags layer on top of a config file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::LossMode;
use crate::diffusion::{DiffusionConfig, IsolatedPolicy, Solver, Sparsify};
use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::model::Activation;
use crate::trainer::{AugSpec, AugVariant, TrainConfig};

/// Full-graph training, or partition-and-merge batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    Cluster,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "full" => Some(Mode::Full),
            "cluster" => Some(Mode::Cluster),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Cluster => "cluster",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Option<Precision> {
        match s {
            "f32" => Some(Precision::F32),
            "f64" => Some(Precision::F64),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Everything a run needs, resolvable from a config file plus flag
/// overrides. The snapshot written by [`RunConfig::to_config_string`]
/// parses back to an identical value, so archived runs re-execute
/// bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: Mode,
    /// Cluster count k (cluster mode).
    pub clusters: usize,
    /// Batch count b ≤ k (cluster mode).
    pub batches: usize,
    /// Optional externally computed partition (one cluster id per line).
    pub import_partition: Option<PathBuf>,
    pub precision: Precision,
    pub threads: usize,
    /// Concatenate student and teacher embeddings when extracting.
    pub concat: bool,
    pub variant: AugVariant,
    pub train: TrainConfig,
    pub diffusion: DiffusionConfig,
    pub probe: ProbeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            out: None,
            mode: Mode::Full,
            clusters: 16,
            batches: 4,
            import_partition: None,
            precision: Precision::F32,
            threads: 1,
            concat: false,
            variant: AugVariant::Ppr,
            train: TrainConfig::default(),
            diffusion: DiffusionConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_str(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Apply `key = value` lines on top of the current values.
    pub fn apply_str(&mut self, text: &str, origin: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{origin}:{}: expected `key = value`, got `{line}`",
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Set one key. Unknown keys and unparseable values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("key {key}: invalid {what} `{value}`"));
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "mode" => self.mode = Mode::parse(value).ok_or_else(|| bad("mode"))?,
            "clusters" => self.clusters = value.parse().map_err(|_| bad("integer"))?,
            "batches" => self.batches = value.parse().map_err(|_| bad("integer"))?,
            "import_partition" => self.import_partition = Some(PathBuf::from(value)),
            "precision" => {
                self.precision = Precision::parse(value).ok_or_else(|| bad("precision"))?
            }
            "threads" => self.threads = value.parse().map_err(|_| bad("integer"))?,
            "concat" => self.concat = parse_bool(value).ok_or_else(|| bad("bool"))?,
            "variant" => self.variant = AugVariant::parse(value).ok_or_else(|| bad("variant"))?,
            "seed" => {
                self.train.seed = value.parse().map_err(|_| bad("seed"))?;
                self.probe.seed = self.train.seed;
            }
            "epochs" => self.train.epochs = value.parse().map_err(|_| bad("integer"))?,
            "lr" => self.train.lr = value.parse().map_err(|_| bad("number"))?,
            "dropout" => self.train.dropout = value.parse().map_err(|_| bad("number"))?,
            "tau" => self.train.tau = value.parse().map_err(|_| bad("number"))?,
            "loss" => self.train.loss = LossMode::parse(value).ok_or_else(|| bad("loss mode"))?,
            "symmetrized" => self.train.symmetrized = parse_bool(value).ok_or_else(|| bad("bool"))?,
            "eval_every" => self.train.eval_every = value.parse().map_err(|_| bad("integer"))?,
            "layer_widths" => {
                let widths: Option<Vec<usize>> = value
                    .split(',')
                    .map(|w| w.trim().parse().ok())
                    .collect();
                self.train.layer_widths = widths.filter(|w| !w.is_empty()).ok_or_else(|| bad("width list"))?;
            }
            "predictor_hidden" => {
                self.train.predictor_hidden = value.parse().map_err(|_| bad("integer"))?
            }
            "activation" => {
                self.train.activation = Activation::parse(value).ok_or_else(|| bad("activation"))?
            }
            "projector" => self.train.projector = parse_bool(value).ok_or_else(|| bad("bool"))?,
            "diffusion.kind" => {
                return Err(Error::Config(
                    "key diffusion.kind: the augmentation variant picks the operator; set `variant` instead"
                        .into(),
                ))
            }
            "diffusion.alpha" => self.diffusion.alpha = value.parse().map_err(|_| bad("number"))?,
            "diffusion.t" => self.diffusion.t = value.parse().map_err(|_| bad("number"))?,
            "diffusion.beta" => self.diffusion.beta = value.parse().map_err(|_| bad("number"))?,
            "diffusion.solver" => {
                self.diffusion.solver = match value {
                    "dense" => Solver::Dense,
                    "iterative" => Solver::Iterative,
                    _ => return Err(bad("solver")),
                }
            }
            "diffusion.tol" => self.diffusion.tol = value.parse().map_err(|_| bad("number"))?,
            "diffusion.max_terms" => {
                self.diffusion.max_terms = value.parse().map_err(|_| bad("integer"))?
            }
            "diffusion.sparsify" => {
                self.diffusion.sparsify = parse_sparsify(value).ok_or_else(|| bad("sparsify"))?
            }
            "diffusion.isolated" => {
                self.diffusion.isolated = match value {
                    "zero" => IsolatedPolicy::Zero,
                    "reject" => IsolatedPolicy::Reject,
                    _ => return Err(bad("isolated policy")),
                }
            }
            "diffusion.renormalize_after" => {
                self.diffusion.renormalize_after = parse_bool(value).ok_or_else(|| bad("bool"))?
            }
            "probe.l2" => self.probe.l2 = value.parse().map_err(|_| bad("number"))?,
            "probe.max_iters" => self.probe.max_iters = value.parse().map_err(|_| bad("integer"))?,
            "probe.lr" => self.probe.lr = value.parse().map_err(|_| bad("number"))?,
            "probe.tol" => self.probe.tol = value.parse().map_err(|_| bad("number"))?,
            "probe.folds" => self.probe.folds = value.parse().map_err(|_| bad("integer"))?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Cross-field checks, called once after file + flags are merged.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.diffusion.validate()?;
        self.probe.validate()?;
        if self.mode == Mode::Cluster {
            if self.clusters == 0 {
                return Err(Error::Config("clusters must be positive".into()));
            }
            if self.batches == 0 || self.batches > self.clusters {
                return Err(Error::Config(format!(
                    "batches must be in 1..=clusters ({})",
                    self.clusters
                )));
            }
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    /// The augmentation spec this config describes.
    pub fn aug_spec(&self) -> AugSpec {
        let mut spec = AugSpec::new(self.variant);
        spec.diffusion = self.diffusion.clone();
        spec.diffusion.kind = self.variant.diffusion_kind().unwrap_or(spec.diffusion.kind);
        spec
    }

    /// Resolved snapshot: every key in schema order. Parsing the output
    /// reproduces this config exactly, except `out` — the snapshot lives in
    /// the output directory, so pinning the directory inside it would stop
    /// the same snapshot from reproducing the run elsewhere.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        if let Some(d) = &self.dataset {
            let _ = writeln!(s, "dataset = {}", d.display());
        }
        let _ = writeln!(s, "mode = {}", self.mode.name());
        let _ = writeln!(s, "clusters = {}", self.clusters);
        let _ = writeln!(s, "batches = {}", self.batches);
        if let Some(p) = &self.import_partition {
            let _ = writeln!(s, "import_partition = {}", p.display());
        }
        let _ = writeln!(s, "precision = {}", self.precision.name());
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "concat = {}", self.concat);
        let _ = writeln!(s, "variant = {}", self.variant.name());
        let _ = writeln!(s, "seed = {}", self.train.seed);
        let _ = writeln!(s, "epochs = {}", self.train.epochs);
        let _ = writeln!(s, "lr = {}", self.train.lr);
        let _ = writeln!(s, "dropout = {}", self.train.dropout);
        let _ = writeln!(s, "tau = {}", self.train.tau);
        let loss = match self.train.loss {
            LossMode::Matrix => "matrix",
            LossMode::PerNode => "per_node",
        };
        let _ = writeln!(s, "loss = {loss}");
        let _ = writeln!(s, "symmetrized = {}", self.train.symmetrized);
        let _ = writeln!(s, "eval_every = {}", self.train.eval_every);
        let widths: Vec<String> = self.train.layer_widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "layer_widths = {}", widths.join(","));
        let _ = writeln!(s, "predictor_hidden = {}", self.train.predictor_hidden);
        let _ = writeln!(s, "activation = {}", self.train.activation.name());
        let _ = writeln!(s, "projector = {}", self.train.projector);
        let _ = writeln!(s, "diffusion.alpha = {}", self.diffusion.alpha);
        let _ = writeln!(s, "diffusion.t = {}", self.diffusion.t);
        let _ = writeln!(s, "diffusion.beta = {}", self.diffusion.beta);
        let solver = match self.diffusion.solver {
            Solver::Dense => "dense",
            Solver::Iterative => "iterative",
        };
        let _ = writeln!(s, "diffusion.solver = {solver}");
        let _ = writeln!(s, "diffusion.tol = {}", self.diffusion.tol);
        let _ = writeln!(s, "diffusion.max_terms = {}", self.diffusion.max_terms);
        let sparsify = match self.diffusion.sparsify {
            Sparsify::None => "none".to_string(),
            Sparsify::Epsilon(e) => format!("epsilon:{e}"),
            Sparsify::TopK(k) => format!("topk:{k}"),
        };
        let _ = writeln!(s, "diffusion.sparsify = {sparsify}");
        let isolated = match self.diffusion.isolated {
            IsolatedPolicy::Zero => "zero",
            IsolatedPolicy::Reject => "reject",
        };
        let _ = writeln!(s, "diffusion.isolated = {isolated}");
        let _ = writeln!(s, "diffusion.renormalize_after = {}", self.diffusion.renormalize_after);
        let _ = writeln!(s, "probe.l2 = {}", self.probe.l2);
        let _ = writeln!(s, "probe.max_iters = {}", self.probe.max_iters);
        let _ = writeln!(s, "probe.lr = {}", self.probe.lr);
        let _ = writeln!(s, "probe.tol = {}", self.probe.tol);
        let _ = writeln!(s, "probe.folds = {}", self.probe.folds);
        s
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

/// `none`, `epsilon:1e-4`, or `topk:64`.
fn parse_sparsify(s: &str) -> Option<Sparsify> {
    if s == "none" {
        return Some(Sparsify::None);
    }
    let (kind, arg) = s.split_once(':')?;
    match kind {
        "epsilon" => arg.parse().ok().map(Sparsify::Epsilon),
        "topk" => arg.parse().ok().map(Sparsify::TopK),
        _ => None,
    }
}
