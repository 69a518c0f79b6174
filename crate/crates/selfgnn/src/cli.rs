//! Command-line surface: `augment | train | embed | evaluate | ablate |
//! report | synth`, glued together by [`RunConfig`] files with flag
//! overrides.
//!
//! Every writing command drops a `config.resolved.cfg` snapshot into its
//! output directory; re-feeding that snapshot reproduces the run. Exit
//! codes: 1 for config errors, 2 for data errors, 3 for numeric failures.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::cluster::{train_clustered, Partition};
use crate::config::{Mode, Precision, RunConfig};
use crate::datagen::{synthetic_graph, SynthConfig};
use crate::dense::Matrix;
use crate::diffusion::diffusion_operator;
use crate::error::{Error, Result};
use crate::eval::{collapse_metrics, kfold_accuracy, logistic_probe, ProbeConfig};
use crate::features::{permute_features, random_permutation};
use crate::graph::{load_graph_bundle, save_graph_bundle, Graph, Split};
use crate::model::ModelParams;
use crate::rng::named_rng;
use crate::scalar::Scalar;
use crate::trainer::{embed, make_views, train, AugVariant, EpochRecord, TrainOutcome};

#[derive(Parser)]
#[command(name = "selfgnn", version, about = "Self-supervised graph embeddings via a student/teacher Siamese network", max_term_width = 100)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Config file of `key = value` lines; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for weights, dropout, batch order, and splits.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to SELFGNN_THREADS, then 1.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Training precision: f32 or f64.
    #[arg(long, global = true)]
    precision: Option<String>,
    /// Dataset bundle directory (graph.tsv, features.tsv, meta.tsv, …).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Augmentation variant: ppr | heat | katz | split | standardize | ldp | paste.
    #[arg(long, global = true)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the augmentation view(s) for the configured variant.
    Augment {
        /// Feature augmentation to apply (split | standardize | ldp | paste);
        /// shorthand for --variant.
        #[arg(long)]
        feature: Option<String>,
    },
    /// Train a model; writes history.tsv, model.ckpt, and the config snapshot.
    Train {
        /// full or cluster.
        #[arg(long)]
        mode: Option<String>,
        /// Cluster count k (cluster mode).
        #[arg(long)]
        clusters: Option<usize>,
        /// Batch count b (cluster mode).
        #[arg(long)]
        batches: Option<usize>,
        /// File with one cluster id per node, replacing the built-in partitioner.
        #[arg(long)]
        import_partition: Option<PathBuf>,
    },
    /// Extract embeddings from a checkpoint into embeddings.tsv.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Append the teacher's view of the second input (doubles width).
        #[arg(long)]
        concat: bool,
    },
    /// Probe a checkpoint's embeddings; writes report.tsv.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        concat: bool,
    },
    /// Re-train under controlled perturbations and report the accuracy rows.
    Ablate {
        /// split-perm (feature permutations) or projection-head (with/without).
        #[arg(long)]
        what: String,
        /// Perturbed runs for split-perm; the baseline row is extra.
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
    /// Summarize a run directory's history.tsv and report.tsv on stdout.
    Report,
    /// Generate a synthetic planted-partition bundle for smoke tests.
    Synth {
        #[arg(long, default_value_t = 800)]
        nodes: usize,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 300)]
        features: usize,
        #[arg(long, default_value_t = 7.0)]
        avg_degree: f64,
        #[arg(long, default_value_t = 0.3)]
        label_noise: f64,
    },
}

/// Entry point for the binary: parse, run, map errors onto exit codes.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("selfgnn: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli.global)?;
    init_threads(cfg.threads);
    match cli.command {
        Command::Augment { feature } => {
            if let Some(kind) = feature {
                let variant = AugVariant::parse(&kind)
                    .filter(|v| v.diffusion_kind().is_none())
                    .ok_or_else(|| {
                        Error::Config(format!("--feature {kind}: not a feature augmentation"))
                    })?;
                cfg.variant = variant;
            }
            cfg.validate()?;
            cmd_augment(&cfg)
        }
        Command::Train { mode, clusters, batches, import_partition } => {
            if let Some(m) = mode {
                cfg.set("mode", &m)?;
            }
            if let Some(k) = clusters {
                cfg.clusters = k;
            }
            if let Some(b) = batches {
                cfg.batches = b;
            }
            if let Some(p) = import_partition {
                cfg.import_partition = Some(p);
            }
            cfg.validate()?;
            match cfg.precision {
                Precision::F32 => cmd_train::<f32>(&cfg),
                Precision::F64 => cmd_train::<f64>(&cfg),
            }
        }
        Command::Embed { checkpoint, concat } => {
            cfg.concat = concat || cfg.concat;
            cfg.validate()?;
            match checkpoint::stored_dtype(&checkpoint)? {
                1 => cmd_embed::<f32>(&cfg, &checkpoint),
                _ => cmd_embed::<f64>(&cfg, &checkpoint),
            }
        }
        Command::Evaluate { checkpoint, concat } => {
            cfg.concat = concat || cfg.concat;
            cfg.validate()?;
            match checkpoint::stored_dtype(&checkpoint)? {
                1 => cmd_evaluate::<f32>(&cfg, &checkpoint),
                _ => cmd_evaluate::<f64>(&cfg, &checkpoint),
            }
        }
        Command::Ablate { what, trials } => {
            cfg.validate()?;
            match cfg.precision {
                Precision::F32 => cmd_ablate::<f32>(&cfg, &what, trials),
                Precision::F64 => cmd_ablate::<f64>(&cfg, &what, trials),
            }
        }
        Command::Report => cmd_report(&cfg),
        Command::Synth { nodes, classes, features, avg_degree, label_noise } => {
            let synth = SynthConfig {
                num_nodes: nodes,
                num_classes: classes,
                num_features: features,
                avg_degree,
                label_noise,
                seed: cfg.train.seed,
                ..SynthConfig::default()
            };
            cmd_synth(&cfg, &synth)
        }
    }
}

/// Defaults ← config file ← SELFGNN_THREADS ← flags, reusing the config
/// schema so flag values face the same validation as file entries.
fn resolve_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if global.threads.is_none() {
        if let Ok(v) = std::env::var("SELFGNN_THREADS") {
            cfg.threads = v
                .parse()
                .map_err(|_| Error::Config(format!("SELFGNN_THREADS: invalid value `{v}`")))?;
        }
    }
    if let Some(t) = global.threads {
        cfg.threads = t;
    }
    if let Some(seed) = global.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &global.out {
        cfg.out = Some(out.clone());
    }
    if let Some(p) = &global.precision {
        cfg.set("precision", p)?;
    }
    if let Some(d) = &global.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(v) = &global.variant {
        cfg.set("variant", v)?;
    }
    Ok(cfg)
}

fn init_threads(threads: usize) {
    // The global pool can only be built once per process; later calls
    // (e.g. under `cargo test`) keep the first configuration.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
}

fn require_dataset(cfg: &RunConfig) -> Result<Graph> {
    let dir = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset: pass --dataset or set `dataset`".into()))?;
    load_graph_bundle(dir)
}

/// Create the output directory and drop the resolved-config snapshot.
fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `out`".into()))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let snapshot = out.join("config.resolved.cfg");
    std::fs::write(&snapshot, cfg.to_config_string()).map_err(|e| Error::io(&snapshot, e))?;
    Ok(out.clone())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dataset_name(cfg: &RunConfig) -> String {
    cfg.dataset
        .as_ref()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".into())
}

// --- augment ----------------------------------------------------------

fn cmd_augment(cfg: &RunConfig) -> Result<()> {
    let g = require_dataset(cfg)?;
    let out = prepare_out(cfg)?;
    let spec = cfg.aug_spec();
    if cfg.variant.diffusion_kind().is_some() {
        // Topological variant: write the sparsified diffusion operator as
        // weighted edges, headed by the settings that produced it.
        let h = diffusion_operator(&g.adjacency, &spec.diffusion)?;
        let mut text = format!(
            "# variant={} alpha={} t={} beta={} solver={} tol={} sparsify={} nnz={}\n",
            cfg.variant.name(),
            spec.diffusion.alpha,
            spec.diffusion.t,
            spec.diffusion.beta,
            match spec.diffusion.solver {
                crate::diffusion::Solver::Dense => "dense",
                crate::diffusion::Solver::Iterative => "iterative",
            },
            spec.diffusion.tol,
            match spec.diffusion.sparsify {
                crate::diffusion::Sparsify::None => "none".to_string(),
                crate::diffusion::Sparsify::Epsilon(e) => format!("epsilon:{e}"),
                crate::diffusion::Sparsify::TopK(k) => format!("topk:{k}"),
            },
            h.nnz(),
        );
        for u in 0..h.rows() {
            for (v, w) in h.row_iter(u) {
                text.push_str(&format!("{u}\t{v}\t{w}\n"));
            }
        }
        let path = out.join(format!("h.{}.tsv", cfg.variant.name()));
        write_text(&path, &text)?;
        println!("wrote {} ({} nonzeros)", path.display(), h.nnz());
    } else {
        // Feature variant: materialize both views' features.
        let views = make_views::<f64>(&g, &spec)?;
        for (role, view) in [("view1", &views.student), ("view2", &views.teacher)] {
            let x = view.x.to_dense();
            let mut text = String::new();
            for i in 0..x.rows() {
                let row: Vec<String> = (0..x.cols()).map(|j| x[(i, j)].to_string()).collect();
                text.push_str(&row.join("\t"));
                text.push('\n');
            }
            let path = out.join(format!("features.{}.{role}.tsv", cfg.variant.name()));
            write_text(&path, &text)?;
            println!("wrote {} ({}x{})", path.display(), x.rows(), x.cols());
        }
    }
    Ok(())
}

// --- train ------------------------------------------------------------

fn history_tsv(history: &[EpochRecord]) -> String {
    let mut text = String::from("epoch\tloss\tval_acc\n");
    for r in history {
        let acc = r.val_acc.map(|a| a.to_string()).unwrap_or_default();
        text.push_str(&format!("{}\t{}\t{}\n", r.epoch, r.loss, acc));
    }
    text
}

fn read_partition_file(path: &Path, num_nodes: usize) -> Result<Partition> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut assignment = Vec::with_capacity(num_nodes);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let id: u32 = line.parse().map_err(|_| {
            Error::parse(path.display().to_string(), lineno + 1, "expected a cluster id")
        })?;
        assignment.push(id);
    }
    let k = assignment.iter().max().map_or(0, |&m| m as usize + 1);
    Partition::from_assignment(assignment, k)
}

fn run_training<F: Scalar>(cfg: &RunConfig, g: &Graph) -> Result<TrainOutcome<F>> {
    let spec = cfg.aug_spec();
    match cfg.mode {
        Mode::Full => train::<F>(g, &spec, &cfg.train),
        Mode::Cluster => {
            let imported = match &cfg.import_partition {
                Some(path) => Some(read_partition_file(path, g.num_nodes())?),
                None => None,
            };
            train_clustered::<F>(g, &spec, &cfg.train, cfg.clusters, cfg.batches, imported)
        }
    }
}

fn cmd_train<F: Scalar>(cfg: &RunConfig) -> Result<()> {
    let g = require_dataset(cfg)?;
    let out = prepare_out(cfg)?;
    let started = Instant::now();
    let outcome = run_training::<F>(cfg, &g)?;
    write_text(&out.join("history.tsv"), &history_tsv(&outcome.history))?;
    checkpoint::save(&outcome.params, &out.join("model.ckpt"))?;
    let elapsed = started.elapsed().as_secs_f64();
    match (outcome.best_epoch, outcome.best_val) {
        (Some(e), Some(v)) => {
            println!("trained {} epochs in {elapsed:.1}s; best val acc {v:.4} at epoch {e}", cfg.train.epochs)
        }
        _ => println!("trained {} epochs in {elapsed:.1}s (no validation probes)", cfg.train.epochs),
    }
    Ok(())
}

// --- embed ------------------------------------------------------------

fn embeddings_tsv<F: Scalar>(emb: &Matrix<F>) -> String {
    let mut text = String::new();
    for i in 0..emb.rows() {
        let row: Vec<String> = (0..emb.cols()).map(|j| emb[(i, j)].to_string()).collect();
        text.push_str(&row.join("\t"));
        text.push('\n');
    }
    text
}

fn load_and_embed<F: Scalar>(cfg: &RunConfig, ckpt: &Path, g: &Graph) -> Result<Matrix<F>> {
    let mut params: ModelParams<F> = checkpoint::load(ckpt)?;
    let views = make_views::<F>(g, &cfg.aug_spec())?;
    embed(&mut params, &views, cfg.concat)
}

fn cmd_embed<F: Scalar>(cfg: &RunConfig, ckpt: &Path) -> Result<()> {
    let g = require_dataset(cfg)?;
    let out = prepare_out(cfg)?;
    let emb = load_and_embed::<F>(cfg, ckpt, &g)?;
    write_text(&out.join("embeddings.tsv"), &embeddings_tsv(&emb))?;
    println!("wrote {} ({}x{})", out.join("embeddings.tsv").display(), emb.rows(), emb.cols());
    Ok(())
}

// --- evaluate ---------------------------------------------------------

struct ReportRow {
    dataset: String,
    variant: String,
    protocol: String,
    accuracy_mean: f64,
    accuracy_std: f64,
    collapse_mean_std: f64,
    effective_rank: f64,
    wall_time_s: f64,
}

fn report_tsv(rows: &[ReportRow]) -> String {
    let mut text = String::from(
        "dataset\tvariant\tprotocol\taccuracy_mean\taccuracy_std\tcollapse_mean_std\teffective_rank\twall_time_s\n",
    );
    for r in rows {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.3}\n",
            r.dataset,
            r.variant,
            r.protocol,
            r.accuracy_mean,
            r.accuracy_std,
            r.collapse_mean_std,
            r.effective_rank,
            r.wall_time_s,
        ));
    }
    text
}

/// Probe accuracy on the bundle's train/test split (protocol used for
/// acceptance): fit on train-split embeddings, score on test-split.
fn split_probe(emb: &Matrix<f64>, g: &Graph, probe: &ProbeConfig) -> Result<f64> {
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (i, s) in g.split.iter().enumerate() {
        match s {
            Split::Train if g.labels[i].is_some() => train_idx.push(i),
            Split::Test if g.labels[i].is_some() => test_idx.push(i),
            _ => {}
        }
    }
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Data("split probe needs labeled train and test nodes".into()));
    }
    let gather = |idx: &[usize]| -> (Matrix<f64>, Vec<u32>) {
        (
            emb.gather_rows(idx),
            idx.iter().map(|&i| g.labels[i].expect("filtered")).collect(),
        )
    };
    let (tr_x, tr_y) = gather(&train_idx);
    let (te_x, te_y) = gather(&test_idx);
    logistic_probe(&tr_x, &tr_y, &te_x, &te_y, probe)
}

fn evaluate_rows(
    cfg: &RunConfig,
    g: &Graph,
    emb: &Matrix<f64>,
    variant_label: &str,
) -> Result<Vec<ReportRow>> {
    let collapse = collapse_metrics(emb)?;
    let dataset = dataset_name(cfg);
    let mut rows = Vec::new();

    let has_split = g.split.iter().any(|s| *s == Split::Train)
        && g.split.iter().any(|s| *s == Split::Test);
    if has_split {
        let started = Instant::now();
        let acc = split_probe(emb, g, &cfg.probe)?;
        rows.push(ReportRow {
            dataset: dataset.clone(),
            variant: variant_label.to_string(),
            protocol: "train-test".into(),
            accuracy_mean: acc,
            accuracy_std: 0.0,
            collapse_mean_std: collapse.mean_std,
            effective_rank: collapse.effective_rank,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }

    let started = Instant::now();
    let (mean, std) = kfold_accuracy(emb, &g.labels, &cfg.probe)?;
    rows.push(ReportRow {
        dataset,
        variant: variant_label.to_string(),
        protocol: format!("{}-fold-cv", cfg.probe.folds),
        accuracy_mean: mean,
        accuracy_std: std,
        collapse_mean_std: collapse.mean_std,
        effective_rank: collapse.effective_rank,
        wall_time_s: started.elapsed().as_secs_f64(),
    });
    Ok(rows)
}

fn cmd_evaluate<F: Scalar>(cfg: &RunConfig, ckpt: &Path) -> Result<()> {
    let g = require_dataset(cfg)?;
    let out = prepare_out(cfg)?;
    let emb = load_and_embed::<F>(cfg, ckpt, &g)?.cast::<f64>();
    let rows = evaluate_rows(cfg, &g, &emb, cfg.variant.name())?;
    write_text(&out.join("report.tsv"), &report_tsv(&rows))?;
    for r in &rows {
        println!(
            "{} {} {}: accuracy {:.4} ± {:.4}, mean per-dim std {:.4}, effective rank {:.1}",
            r.dataset, r.variant, r.protocol, r.accuracy_mean, r.accuracy_std,
            r.collapse_mean_std, r.effective_rank,
        );
    }
    Ok(())
}

// --- ablate -----------------------------------------------------------

/// Train + split-probe one configuration; returns a report row.
fn ablate_run<F: Scalar>(
    cfg: &RunConfig,
    g: &Graph,
    variant_label: &str,
) -> Result<ReportRow> {
    let started = Instant::now();
    let outcome = run_training::<F>(cfg, g)?;
    let mut params = outcome.params;
    let views = make_views::<F>(g, &cfg.aug_spec())?;
    let emb = embed(&mut params, &views, cfg.concat)?.cast::<f64>();
    let collapse = collapse_metrics(&emb)?;
    let acc = split_probe(&emb, g, &cfg.probe)?;
    Ok(ReportRow {
        dataset: dataset_name(cfg),
        variant: variant_label.to_string(),
        protocol: "train-test".into(),
        accuracy_mean: acc,
        accuracy_std: 0.0,
        collapse_mean_std: collapse.mean_std,
        effective_rank: collapse.effective_rank,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn cmd_ablate<F: Scalar>(cfg: &RunConfig, what: &str, trials: usize) -> Result<()> {
    let g = require_dataset(cfg)?;
    let out = prepare_out(cfg)?;
    let mut rows = Vec::new();
    match what {
        // Does shuffling feature columns before the split-in-half
        // augmentation move the needle? (It should not.)
        "split-perm" => {
            let mut cfg = cfg.clone();
            cfg.variant = AugVariant::Split;
            rows.push(ablate_run::<F>(&cfg, &g, "split")?);
            for trial in 1..=trials {
                let mut rng = named_rng(cfg.train.seed, &format!("split-perm-{trial}"));
                let perm = random_permutation(g.num_features(), &mut rng);
                let mut permuted = g.clone();
                permuted.features = permute_features(&g.features, &perm)?;
                rows.push(ablate_run::<F>(&cfg, &permuted, &format!("split-perm-{trial}"))?);
            }
        }
        // Insert the projection head between encoder and predictor, as in
        // the bigger Siamese frameworks, and compare against without.
        "projection-head" => {
            for (label, projector) in [("no-projector", false), ("projector", true)] {
                let mut cfg = cfg.clone();
                cfg.train.projector = projector;
                rows.push(ablate_run::<F>(&cfg, &g, label)?);
            }
        }
        other => {
            return Err(Error::Config(format!(
                "--what {other}: expected split-perm or projection-head"
            )))
        }
    }
    write_text(&out.join("report.tsv"), &report_tsv(&rows))?;
    for r in &rows {
        println!("{}: accuracy {:.4}", r.variant, r.accuracy_mean);
    }
    Ok(())
}

// --- report -----------------------------------------------------------

fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let out = cfg
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("no run directory: pass --out".into()))?;
    let history_path = out.join("history.tsv");
    if history_path.exists() {
        let text = std::fs::read_to_string(&history_path).map_err(|e| Error::io(&history_path, e))?;
        let mut final_loss = None;
        let mut best: Option<(f64, u64)> = None;
        let mut epochs = 0u64;
        for line in text.lines().skip(1) {
            let mut fields = line.split('\t');
            let epoch: u64 = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("malformed history line `{line}`")))?;
            let loss: f64 = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("malformed history line `{line}`")))?;
            epochs = epochs.max(epoch);
            final_loss = Some(loss);
            if let Some(acc) = fields.next().and_then(|s| s.parse::<f64>().ok()) {
                if best.map_or(true, |(b, _)| acc > b) {
                    best = Some((acc, epoch));
                }
            }
        }
        match (final_loss, best) {
            (Some(loss), Some((acc, epoch))) => println!(
                "{epochs} epochs, final loss {loss:.4}, best val acc {acc:.4} at epoch {epoch}"
            ),
            (Some(loss), None) => println!("{epochs} epochs, final loss {loss:.4}"),
            _ => println!("history.tsv is empty"),
        }
    }
    let report_path = out.join("report.tsv");
    if report_path.exists() {
        let text = std::fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
        print!("{text}");
    }
    if !history_path.exists() && !report_path.exists() {
        return Err(Error::Data(format!(
            "{}: neither history.tsv nor report.tsv found",
            out.display()
        )));
    }
    Ok(())
}

// --- synth ------------------------------------------------------------

fn cmd_synth(cfg: &RunConfig, synth: &SynthConfig) -> Result<()> {
    let out = cfg
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("no output directory: pass --out".into()))?;
    let g = synthetic_graph(synth)?;
    save_graph_bundle(&g, out)?;
    println!(
        "wrote bundle {} ({} nodes, {} edges, {} features, {} classes)",
        out.display(),
        g.num_nodes(),
        g.num_edges(),
        g.num_features(),
        g.num_classes,
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_tsv_blanks_missing_probes() {
        let rows = vec![
            EpochRecord { epoch: 1, loss: 2.0, val_acc: None },
            EpochRecord { epoch: 2, loss: 1.5, val_acc: Some(0.5) },
        ];
        let text = history_tsv(&rows);
        assert_eq!(text, "epoch\tloss\tval_acc\n1\t2\t\n2\t1.5\t0.5\n");
    }

    #[test]
    fn report_tsv_has_fixed_header() {
        let text = report_tsv(&[]);
        assert_eq!(
            text,
            "dataset\tvariant\tprotocol\taccuracy_mean\taccuracy_std\tcollapse_mean_std\teffective_rank\twall_time_s\n"
        );
    }

    #[test]
    fn partition_file_roundtrip() {
        let dir = std::env::temp_dir().join("selfgnn-cli-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("partition.tsv");
        std::fs::write(&path, "# comment\n0\n1\n0\n1\n").unwrap();
        let p = read_partition_file(&path, 4).unwrap();
        assert_eq!(p.k, 2);
        assert_eq!(p.assignment, vec![0, 1, 0, 1]);
        std::fs::write(&path, "0\nx\n").unwrap();
        assert!(read_partition_file(&path, 2).is_err());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn cli_parses_subcommands() {
        let cli = Cli::try_parse_from([
            "selfgnn", "train", "--dataset", "d", "--out", "o", "--seed", "9",
            "--mode", "cluster", "--clusters", "8", "--batches", "2",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Train { .. }));
        assert_eq!(cli.global.seed, Some(9));
        let cfg = resolve_config(&cli.global).unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.dataset, Some(PathBuf::from("d")));
    }

    #[test]
    fn embeddings_format_is_tab_separated() {
        let m = Matrix::<f64>::from_vec(2, 2, vec![1.0, 2.5, -3.0, 0.0]);
        assert_eq!(embeddings_tsv(&m), "1\t2.5\n-3\t0\n");
    }
}
