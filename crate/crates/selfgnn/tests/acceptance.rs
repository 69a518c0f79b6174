//! Release gate. Eight numbered criteria run in sequence inside one test;
//! each prints a `criterion N (...): PASS/FAIL` line (visible under
//! `--nocapture`, or in the failure message otherwise) and the test fails
//! if any criterion does. Every tolerance is pinned here, next to the
//! check it guards.
//!
//! Criteria 4–7 need a node-classification dataset. When the environment
//! variable `SELFGNN_DATA_DIR` names a directory containing a `cora/`
//! graph bundle, that bundle is used. Otherwise the gate falls back to a
//! pinned synthetic stand-in with the same protocol shape — a small
//! labeled train split and a large test split — written to disk and read
//! back through the bundle format so the fallback also exercises dataset
//! IO. All seeds and constants are fixed, and training is deterministic,
//! so reruns of the gate reproduce the same numbers to the last bit.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use selfgnn::autodiff::check::{central_diff, max_relative_error};
use selfgnn::autodiff::{AdamState, BatchNormState, LossMode, Mode, SparseHandle, Tape, Var};
use selfgnn::cluster::{merge_clusters, partition_graph, train_clustered};
use selfgnn::datagen::{synthetic_graph, SynthConfig};
use selfgnn::diffusion::{
    alloc_peak, heat_kernel_diffusion, katz_diffusion, ppr_diffusion, reset_alloc_peak,
    DiffusionConfig, DiffusionKind, Solver,
};
use selfgnn::eval::{collapse_metrics, logistic_probe, ProbeConfig};
use selfgnn::features::{permute_features, random_permutation};
use selfgnn::model::{init_params, ModelConfig};
use selfgnn::rng::named_rng;
use selfgnn::trainer::{
    embed, ema_update, make_views, train, train_step, AugSpec, AugVariant, TrainConfig,
};
use selfgnn::{load_graph_bundle, save_graph_bundle, symmetric_renormalize, Graph, Matrix, Split};

/// Ok carries a one-line detail for the PASS report; Err carries the reason.
type Criterion = Result<String, String>;

#[test]
fn acceptance_gate() {
    let t0 = Instant::now();
    let mut failures: Vec<String> = Vec::new();
    let mut report = |no: usize, label: &str, outcome: Criterion| match outcome {
        Ok(detail) => println!("criterion {no} ({label}): PASS — {detail}"),
        Err(why) => {
            println!("criterion {no} ({label}): FAIL — {why}");
            failures.push(format!("criterion {no} ({label}): {why}"));
        }
    };

    report(1, "gradient suite", gradient_suite());
    report(2, "diffusion identities", diffusion_identities());
    report(3, "architecture contracts", architecture_contracts());

    let scratch = tempfile::tempdir().expect("create scratch dir");
    match Protocol::run(scratch.path()) {
        Ok(p) => {
            report(4, "linear-probe accuracy", criterion_accuracy(&p));
            report(5, "non-collapse", criterion_non_collapse(&p));
            report(6, "split-permutation stability", criterion_split_permutation(&p));
            report(7, "clustered training", criterion_clustered(&p));
        }
        Err(why) => {
            let why = format!("protocol runs failed: {why}");
            report(4, "linear-probe accuracy", Err(why.clone()));
            report(5, "non-collapse", Err(why.clone()));
            report(6, "split-permutation stability", Err(why.clone()));
            report(7, "clustered training", Err(why));
        }
    }

    report(8, "byte-identical reruns", byte_identical_reruns(scratch.path()));

    println!("acceptance gate finished in {:.1}s", t0.elapsed().as_secs_f64());
    assert!(
        failures.is_empty(),
        "{} acceptance criterion(s) failed:\n{}",
        failures.len(),
        failures.join("\n")
    );
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic gradients vs central finite differences
// ---------------------------------------------------------------------------

/// Every differentiable op, plus a two-layer encoder + predictor composite,
/// checked against central differences in f64. Plain ops must agree to a
/// relative error below 1e-5; paths that differentiate through batch norm
/// get 1e-4 (batch statistics couple every entry, amplifying the finite-
/// difference truncation error). The whole suite must finish inside a
/// minute.
fn gradient_suite() -> Criterion {
    const TOL_PLAIN: f64 = 1e-5;
    const TOL_THROUGH_BN: f64 = 1e-4;

    let started = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(100);
    let mut results: Vec<(String, f64, f64)> = Vec::new(); // (label, rel err, tol)

    let rand = |r: usize, c: usize, rng: &mut ChaCha12Rng| {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.5..1.5))
    };
    // Values bounded away from zero, for kinked activations: a finite
    // difference straddling the kink would be meaningless.
    let rand_off = |r: usize, c: usize, rng: &mut ChaCha12Rng| {
        Matrix::from_fn(r, c, |_, _| {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.1..1.5)
        })
    };

    // matmul, both operands.
    {
        let a0 = rand(3, 4, &mut rng);
        let b0 = rand(4, 2, &mut rng);
        let w = rand(3, 2, &mut rng);
        let (b_c, w_c) = (b0.clone(), w.clone());
        check_gradient(
            "matmul d/dA",
            &a0,
            TOL_PLAIN,
            Box::new(move |t, x| {
                let b = t.constant(b_c.clone());
                let y = t.matmul(x, b).unwrap();
                t.weighted_sum(y, w_c.clone()).unwrap()
            }),
            &mut results,
        )?;
        let (a_c, w_c) = (a0.clone(), w.clone());
        check_gradient(
            "matmul d/dB",
            &b0,
            TOL_PLAIN,
            Box::new(move |t, x| {
                let a = t.constant(a_c.clone());
                let y = t.matmul(a, x).unwrap();
                t.weighted_sum(y, w_c.clone()).unwrap()
            }),
            &mut results,
        )?;
    }

    // Sparse-dense product with a fixed operator (a small renormalized
    // adjacency, the shape it has in the encoder).
    let operator = {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3), (1, 4)];
        let g = unit_graph(6, &edges);
        SparseHandle::new(symmetric_renormalize(&g.adjacency))
    };
    {
        let x0 = rand(6, 3, &mut rng);
        let w = rand(6, 3, &mut rng);
        let (op, w_c) = (operator.clone(), w.clone());
        check_gradient(
            "spmm_fixed d/dX",
            &x0,
            TOL_PLAIN,
            Box::new(move |t, x| {
                let y = t.spmm_fixed(&op, x).unwrap();
                t.weighted_sum(y, w_c.clone()).unwrap()
            }),
            &mut results,
        )?;
    }

    // Bias broadcast, both operands.
    {
        let x0 = rand(4, 3, &mut rng);
        let b0 = rand(1, 3, &mut rng);
        let w = rand(4, 3, &mut rng);
        let (b_c, w_c) = (b0.clone(), w.clone());
        check_gradient(
            "add_bias d/dX",
            &x0,
            TOL_PLAIN,
            Box::new(move |t, x| {
                let b = t.constant(b_c.clone());
                let y = t.add_bias(x, b).unwrap();
                t.weighted_sum(y, w_c.clone()).unwrap()
            }),
            &mut results,
        )?;
        let (x_c, w_c) = (x0.clone(), w.clone());
        check_gradient(
            "add_bias d/db",
            &b0,
            TOL_PLAIN,
            Box::new(move |t, x| {
                let xx = t.constant(x_c.clone());
                let y = t.add_bias(xx, x).unwrap();
                t.weighted_sum(y, w_c.clone()).unwrap()
            }),
            &mut results,
        )?;
    }

    // Activations.
    {
        let x0 = rand_off(4, 3, &mut rng);
        let w = rand(4, 3, &mut rng);
        let w_c = w.clone();
        check_gradient(
            "relu d/dX",
            &x0,
            TOL_PLAIN,
            Box::new(move |t, x| {
                let y = t.relu(x).unwrap();
                t.weighted_sum(y, w_c.clone()).unwrap()
            }),
            &mut results,
        )?;
        let slope0 = Matrix::from_vec(1, 1, vec![0.25]);
        let (s_c, w_c) = (slope0.clone(), w.clone());
        check_gradient(
            "prelu d/dX",
            &x0,
            TOL_PLAIN,
            Box::new(move |t, x| {
                let s = t.constant(s_c.clone());
                let y = t.prelu(x, s).unwrap();
                t.weighted_sum(y, w_c.clone()).unwrap()
            }),
            &mut results,
        )?;
        let (x_c, w_c) = (x0.clone(), w.clone());
        check_gradient(
            "prelu d/dslope",
            &slope0,
            TOL_PLAIN,
            Box::new(move |t, x| {
                let xx = t.constant(x_c.clone());
                let y = t.prelu(xx, x).unwrap();
                t.weighted_sum(y, w_c.clone()).unwrap()
            }),
            &mut results,
        )?;
    }

    // Batch norm in train mode; the state is rebuilt per call so running
    // statistics never leak between finite-difference evaluations.
    {
        let x0 = rand(8, 3, &mut rng);
        let g0 = Matrix::from_fn(1, 3, |_, _| rng.gen_range(0.5..1.5));
        let be0 = rand(1, 3, &mut rng);
        let w = rand(8, 3, &mut rng);
        let (g_c, be_c, w_c) = (g0.clone(), be0.clone(), w.clone());
        check_gradient(
            "batch_norm d/dX",
            &x0,
            TOL_PLAIN,
            Box::new(move |t, x| {
                let ga = t.constant(g_c.clone());
                let be = t.constant(be_c.clone());
                let mut st = BatchNormState::new(3);
                let y = t.batch_norm(x, ga, be, &mut st, Mode::Train).unwrap();
                t.weighted_sum(y, w_c.clone()).unwrap()
            }),
            &mut results,
        )?;
        let (x_c, be_c, w_c) = (x0.clone(), be0.clone(), w.clone());
        check_gradient(
            "batch_norm d/dgamma",
            &g0,
            TOL_PLAIN,
            Box::new(move |t, x| {
                let xx = t.constant(x_c.clone());
                let be = t.constant(be_c.clone());
                let mut st = BatchNormState::new(3);
                let y = t.batch_norm(xx, x, be, &mut st, Mode::Train).unwrap();
                t.weighted_sum(y, w_c.clone()).unwrap()
            }),
            &mut results,
        )?;
        let (x_c, g_c, w_c) = (x0.clone(), g0.clone(), w.clone());
        check_gradient(
            "batch_norm d/dbeta",
            &be0,
            TOL_PLAIN,
            Box::new(move |t, x| {
                let xx = t.constant(x_c.clone());
                let ga = t.constant(g_c.clone());
                let mut st = BatchNormState::new(3);
                let y = t.batch_norm(xx, ga, x, &mut st, Mode::Train).unwrap();
                t.weighted_sum(y, w_c.clone()).unwrap()
            }),
            &mut results,
        )?;
    }

    // Dropout with a fixed mask: the mask RNG is reseeded identically on
    // every call, so the sampled mask is a constant of the check.
    {
        let x0 = rand(5, 4, &mut rng);
        let w = rand(5, 4, &mut rng);
        let w_c = w.clone();
        check_gradient(
            "dropout (fixed mask) d/dX",
            &x0,
            TOL_PLAIN,
            Box::new(move |t, x| {
                let mut mask_rng = ChaCha12Rng::seed_from_u64(7);
                let y = t.dropout(x, 0.35, Mode::Train, &mut mask_rng).unwrap();
                t.weighted_sum(y, w_c.clone()).unwrap()
            }),
            &mut results,
        )?;
    }

    // Cosine loss, both reduction modes; the target side carries no
    // gradient by construction, so only d/dp is checked.
    {
        let p0 = rand_off(5, 3, &mut rng);
        let z0 = rand_off(5, 3, &mut rng);
        for (label, mode) in [
            ("cosine_mse_loss(matrix) d/dp", LossMode::Matrix),
            ("cosine_mse_loss(per-node) d/dp", LossMode::PerNode),
        ] {
            let z_c = z0.clone();
            check_gradient(
                label,
                &p0,
                TOL_PLAIN,
                Box::new(move |t, x| {
                    let z = t.constant(z_c.clone());
                    t.cosine_mse_loss(x, z, mode).unwrap()
                }),
                &mut results,
            )?;
        }
    }

    // Composite: conv → bias → batch norm → prelu, twice, then the
    // predictor MLP and the cosine loss — the exact training forward pass
    // minus dropout. Checked at four parameters: the first conv weight and
    // slope (whose paths cross three batch norms) and the last linear
    // layer (whose path crosses none).
    {
        let x_in = rand(6, 5, &mut rng);
        let z_t = rand_off(6, 3, &mut rng);
        // 0:W1 1:b1 2:g1 3:be1 4:s1 | 5:W2 6:b2 7:g2 8:be2 9:s2 |
        // 10:P1 11:pb1 12:pg1 13:pbe1 14:ps1 | 15:P2 16:pb2
        let tensors: Vec<Matrix<f64>> = vec![
            rand(5, 4, &mut rng),
            rand(1, 4, &mut rng),
            Matrix::from_fn(1, 4, |_, _| rng.gen_range(0.5..1.5)),
            rand(1, 4, &mut rng),
            Matrix::from_vec(1, 1, vec![0.25]),
            rand(4, 3, &mut rng),
            rand(1, 3, &mut rng),
            Matrix::from_fn(1, 3, |_, _| rng.gen_range(0.5..1.5)),
            rand(1, 3, &mut rng),
            Matrix::from_vec(1, 1, vec![0.25]),
            rand(3, 6, &mut rng),
            rand(1, 6, &mut rng),
            Matrix::from_fn(1, 6, |_, _| rng.gen_range(0.5..1.5)),
            rand(1, 6, &mut rng),
            Matrix::from_vec(1, 1, vec![0.25]),
            rand(6, 3, &mut rng),
            rand(1, 3, &mut rng),
        ];
        for (leaf_at, label, tol) in [
            (0, "composite d/dW1 (through 3 batch norms)", TOL_THROUGH_BN),
            (4, "composite d/dslope1 (through 2 batch norms)", TOL_THROUGH_BN),
            (15, "composite d/dP2", TOL_PLAIN),
            (16, "composite d/dpb2", TOL_PLAIN),
        ] {
            let (ts, op, x_c, z_c) = (tensors.clone(), operator.clone(), x_in.clone(), z_t.clone());
            check_gradient(
                label,
                &tensors[leaf_at],
                tol,
                Box::new(move |t, x| {
                    let v = |t: &mut Tape<f64>, i: usize| {
                        if i == leaf_at {
                            x
                        } else {
                            t.constant(ts[i].clone())
                        }
                    };
                    let mut h = t.constant(x_c.clone());
                    for base in [0usize, 5] {
                        let (w, b, ga, be, s) = (
                            v(t, base),
                            v(t, base + 1),
                            v(t, base + 2),
                            v(t, base + 3),
                            v(t, base + 4),
                        );
                        let xw = t.matmul(h, w).unwrap();
                        h = t.spmm_fixed(&op, xw).unwrap();
                        h = t.add_bias(h, b).unwrap();
                        let mut st = BatchNormState::new(t.value(h).cols());
                        h = t.batch_norm(h, ga, be, &mut st, Mode::Train).unwrap();
                        h = t.prelu(h, s).unwrap();
                    }
                    let (p1, pb1, pg, pbe, ps, p2, pb2) = (
                        v(t, 10),
                        v(t, 11),
                        v(t, 12),
                        v(t, 13),
                        v(t, 14),
                        v(t, 15),
                        v(t, 16),
                    );
                    h = t.matmul(h, p1).unwrap();
                    h = t.add_bias(h, pb1).unwrap();
                    let mut st = BatchNormState::new(t.value(h).cols());
                    h = t.batch_norm(h, pg, pbe, &mut st, Mode::Train).unwrap();
                    h = t.prelu(h, ps).unwrap();
                    h = t.matmul(h, p2).unwrap();
                    h = t.add_bias(h, pb2).unwrap();
                    let z = t.constant(z_c.clone());
                    t.cosine_mse_loss(h, z, LossMode::Matrix).unwrap()
                }),
                &mut results,
            )?;
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let mut over: Vec<String> = results
        .iter()
        .filter(|(_, err, tol)| !(err < tol))
        .map(|(label, err, tol)| format!("{label}: rel err {err:.3e} ≥ {tol:.0e}"))
        .collect();
    if elapsed >= 60.0 {
        over.push(format!("suite took {elapsed:.1}s ≥ 60s"));
    }
    if !over.is_empty() {
        return Err(over.join("; "));
    }
    let worst = results.iter().map(|(_, e, _)| *e).fold(0.0, f64::max);
    Ok(format!(
        "{} checks, worst rel err {worst:.2e}, {elapsed:.1}s",
        results.len()
    ))
}

/// Runs `fwd` once analytically and once per perturbed entry, comparing
/// d(loss)/d(x) at `x0`. `fwd` must map a fresh tape and the leaf to a 1×1
/// loss var, rebuilding everything else identically on each call.
fn check_gradient(
    label: &str,
    x0: &Matrix<f64>,
    tol: f64,
    mut fwd: Box<dyn FnMut(&mut Tape<f64>, Var) -> Var>,
    results: &mut Vec<(String, f64, f64)>,
) -> Result<(), String> {
    const STEP: f64 = 1e-5;
    let analytic = {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(x0.clone());
        let loss = fwd(&mut tape, x);
        let grads = tape.backward(loss).map_err(|e| format!("{label}: backward: {e}"))?;
        grads
            .get(x)
            .ok_or_else(|| format!("{label}: no gradient reached the leaf"))?
            .clone()
    };
    let mut f = |m: &Matrix<f64>| -> f64 {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(m.clone());
        let loss = fwd(&mut tape, x);
        tape.value(loss)[(0, 0)]
    };
    let numeric = central_diff(&mut f, x0, STEP);
    let err = max_relative_error(&analytic, &numeric);
    results.push((label.to_string(), err, tol));
    Ok(())
}

/// A featureless, label-free graph for operator identities.
fn unit_graph(n: usize, edges: &[(usize, usize)]) -> Graph {
    Graph::new(
        n,
        edges,
        Matrix::zeros(n, 1),
        vec![None; n],
        vec![Split::None; n],
        1,
    )
    .expect("unit graph")
}

// ---------------------------------------------------------------------------
// Criterion 2: closed-form diffusion identities on random graphs
// ---------------------------------------------------------------------------

/// 100 random connected graphs with up to 200 nodes. On each: the dense
/// personalized-PageRank operator satisfies its defining linear system to
/// 1e-8 and agrees with the truncated-series solver to 1e-6; the dense
/// Katz operator satisfies its system to 1e-8; heat-kernel truncation
/// error shrinks monotonically with the term budget and the converged
/// kernel is column-stochastic to 1e-8. Under a minute in total.
fn diffusion_identities() -> Criterion {
    const GRAPHS: usize = 100;
    const TOL_RESIDUAL: f64 = 1e-8;
    const TOL_SOLVER_AGREEMENT: f64 = 1e-6;
    const TOL_COLUMN_STOCHASTIC: f64 = 1e-8;
    const HEAT_LADDER: [usize; 5] = [2, 4, 8, 16, 32];

    let started = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(200);
    let base = DiffusionConfig::default();
    let (mut worst_ppr, mut worst_agree, mut worst_katz, mut worst_col) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);

    for trial in 0..GRAPHS {
        let n = rng.gen_range(5..=200);
        // A shuffled spanning chain keeps every graph connected; extra
        // random edges vary the density.
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut edges: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0], w[1])).collect();
        for _ in 0..n / 2 {
            let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if u != v {
                edges.push((u, v));
            }
        }
        let g = unit_graph(n, &edges);
        let a_tilde = symmetric_renormalize(&g.adjacency);

        // PPR: H = α(I − (1−α)Ã)⁻¹, so (I − (1−α)Ã)·H − αI must vanish.
        let dense = DiffusionConfig { kind: DiffusionKind::Ppr, solver: Solver::Dense, ..base.clone() };
        let hd = ppr_diffusion(&a_tilde, &dense).map_err(|e| format!("graph {trial}: ppr dense: {e}"))?;
        let mut res = a_tilde.spmm(&hd).map_err(|e| format!("graph {trial}: {e}"))?;
        res.scale(-(1.0 - base.alpha));
        res.add_assign(&hd);
        for i in 0..n {
            res[(i, i)] -= base.alpha;
        }
        worst_ppr = worst_ppr.max(res.max_abs());

        let series = DiffusionConfig { kind: DiffusionKind::Ppr, solver: Solver::Iterative, ..base.clone() };
        let hi = ppr_diffusion(&a_tilde, &series).map_err(|e| format!("graph {trial}: ppr series: {e}"))?;
        worst_agree = worst_agree.max(max_abs_diff(&hd, &hi));

        // Katz: H = (I − βÃ)⁻¹βÃ, so H − βÃ·H − βÃ must vanish.
        let katz = DiffusionConfig { kind: DiffusionKind::Katz, solver: Solver::Dense, ..base.clone() };
        let hk = katz_diffusion(&a_tilde, &katz).map_err(|e| format!("graph {trial}: katz: {e}"))?;
        let mut res = a_tilde.spmm(&hk).map_err(|e| format!("graph {trial}: {e}"))?;
        res.scale(-base.beta);
        res.add_assign(&hk);
        res.axpy(-base.beta, &a_tilde.densify());
        worst_katz = worst_katz.max(res.max_abs());

        // Heat kernel: e^{t(AD⁻¹ − I)} preserves column mass on a graph
        // with no isolated nodes, and adding series terms can only shrink
        // the truncation error (every term is entrywise non-negative).
        let heat = |max_terms: usize, tol: f64| DiffusionConfig {
            kind: DiffusionKind::Heat,
            max_terms,
            tol,
            ..base.clone()
        };
        let hh = heat_kernel_diffusion(&g.adjacency, &heat(1000, 1e-12))
            .map_err(|e| format!("graph {trial}: heat: {e}"))?;
        for j in 0..n {
            let col: f64 = (0..n).map(|i| hh[(i, j)]).sum();
            worst_col = worst_col.max((col - 1.0).abs());
        }
        let href = heat_kernel_diffusion(&g.adjacency, &heat(60, 1e-300))
            .map_err(|e| format!("graph {trial}: heat ref: {e}"))?;
        let mut prev = f64::INFINITY;
        for k in HEAT_LADDER {
            let hk = heat_kernel_diffusion(&g.adjacency, &heat(k, 1e-300))
                .map_err(|e| format!("graph {trial}: heat k={k}: {e}"))?;
            let err = max_abs_diff(&hk, &href);
            if err > prev + 1e-12 {
                return Err(format!(
                    "graph {trial}: heat truncation error rose from {prev:.3e} to {err:.3e} at {k} terms"
                ));
            }
            prev = err;
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let mut over = Vec::new();
    if !(worst_ppr < TOL_RESIDUAL) {
        over.push(format!("ppr residual {worst_ppr:.3e} ≥ {TOL_RESIDUAL:.0e}"));
    }
    if !(worst_agree < TOL_SOLVER_AGREEMENT) {
        over.push(format!("solver disagreement {worst_agree:.3e} ≥ {TOL_SOLVER_AGREEMENT:.0e}"));
    }
    if !(worst_katz < TOL_RESIDUAL) {
        over.push(format!("katz residual {worst_katz:.3e} ≥ {TOL_RESIDUAL:.0e}"));
    }
    if !(worst_col < TOL_COLUMN_STOCHASTIC) {
        over.push(format!("column-sum deviation {worst_col:.3e} ≥ {TOL_COLUMN_STOCHASTIC:.0e}"));
    }
    if elapsed >= 60.0 {
        over.push(format!("took {elapsed:.1}s ≥ 60s"));
    }
    if !over.is_empty() {
        return Err(over.join("; "));
    }
    Ok(format!(
        "{GRAPHS} graphs: ppr residual {worst_ppr:.1e}, solver gap {worst_agree:.1e}, \
         katz residual {worst_katz:.1e}, column sums {worst_col:.1e}, {elapsed:.1}s"
    ))
}

fn max_abs_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Criterion 3: student/teacher architecture contracts
// ---------------------------------------------------------------------------

/// The optimizer must never touch the teacher (checked bitwise with the
/// EMA disabled via τ = 1); the EMA must contract toward a constant
/// student geometrically; the alignment loss must stay in [0, 4] and hit
/// exactly 0 / 2 / 4 on aligned / orthogonal / anti-aligned pairs.
fn architecture_contracts() -> Criterion {
    // (a) Optimizer isolation. With τ = 1 the EMA is the identity, so any
    // teacher movement over three steps could only come from the optimizer.
    let g = synthetic_graph(&SynthConfig {
        num_nodes: 60,
        num_classes: 3,
        num_features: 24,
        features_per_node: 4,
        avg_degree: 4.0,
        seed: 5,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let views = make_views::<f64>(&g, &AugSpec::new(AugVariant::Split)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 3,
        eval_every: 0,
        tau: 1.0,
        layer_widths: vec![8, 4],
        predictor_hidden: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut mcfg = ModelConfig::new(views.student.x.cols());
    mcfg.layer_widths = cfg.layer_widths.clone();
    mcfg.predictor_hidden = cfg.predictor_hidden;
    let mut model = init_params::<f64>(&mcfg, cfg.seed).map_err(|e| e.to_string())?;
    let mut opt = AdamState::new(cfg.lr);
    let mut dropout_rng = named_rng(cfg.seed, "dropout");
    let teacher_before = model.teacher.clone();
    let student_before = model.student.clone();
    let mut losses = Vec::new();
    for _ in 0..3 {
        let loss = train_step(&mut model, &views, &mut opt, &cfg, &mut dropout_rng)
            .map_err(|e| e.to_string())?;
        losses.push(loss);
    }
    for (i, (before, after)) in teacher_before.layers.iter().zip(&model.teacher.layers).enumerate() {
        if before.weight != after.weight
            || before.bn.gamma != after.bn.gamma
            || before.bn.beta != after.bn.beta
            || before.slope != after.slope
        {
            return Err(format!("teacher layer {i} changed under optimizer steps with τ = 1"));
        }
    }
    if student_before.layers[0].weight == model.student.layers[0].weight {
        return Err("student failed to move under optimizer steps".into());
    }

    // (b) Geometric EMA contraction toward a constant student. With the
    // student pinned at zero, φ_k = τ^k·φ_0 entrywise.
    let ema_cfg = ModelConfig { layer_widths: vec![3], ..ModelConfig::new(4) };
    let mut ema_model = init_params::<f64>(&ema_cfg, 1).map_err(|e| e.to_string())?;
    for layer in &mut ema_model.student.layers {
        layer.weight = Matrix::zeros(4, 3);
    }
    let phi0 = ema_model.teacher.layers[0].weight.clone();
    let tau = 0.97f64;
    let k = 25;
    for _ in 0..k {
        ema_update(&ema_model.student, &mut ema_model.teacher, tau).map_err(|e| e.to_string())?;
    }
    let decay = tau.powi(k);
    for (after, before) in ema_model.teacher.layers[0].weight.data().iter().zip(phi0.data()) {
        if (after - before * decay).abs() > 1e-13 * before.abs().max(1.0) {
            return Err(format!(
                "EMA after {k} steps deviates from τ^k·φ₀: {after:.17} vs {:.17}",
                before * decay
            ));
        }
    }

    // (c) Loss range and endpoints.
    let loss_of = |p: Matrix<f64>, z: Matrix<f64>| -> Result<f64, String> {
        let mut tape = Tape::<f64>::new();
        let pv = tape.leaf(p);
        let zv = tape.constant(z);
        let l = tape.cosine_mse_loss(pv, zv, LossMode::Matrix).map_err(|e| e.to_string())?;
        Ok(tape.value(l)[(0, 0)])
    };
    let p = Matrix::from_vec(2, 2, vec![1.0, 2.0, -0.5, 0.25]);
    let mut aligned = p.clone();
    aligned.scale(3.0);
    let mut anti = p.clone();
    anti.scale(-1.0);
    let orth_p = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    let orth_z = Matrix::from_vec(2, 2, vec![0.0, 1.0, -1.0, 0.0]);
    for (name, got, want) in [
        ("aligned", loss_of(p.clone(), aligned)?, 0.0),
        ("orthogonal", loss_of(orth_p, orth_z)?, 2.0),
        ("anti-aligned", loss_of(p.clone(), anti)?, 4.0),
    ] {
        if (got - want).abs() > 1e-12 {
            return Err(format!("{name} loss endpoint {got:.15} ≠ {want}"));
        }
    }
    let mut pair_rng = ChaCha12Rng::seed_from_u64(300);
    for _ in 0..20 {
        let a = Matrix::from_fn(4, 3, |_, _| pair_rng.gen_range(-1.0..1.0) + 0.1);
        let b = Matrix::from_fn(4, 3, |_, _| pair_rng.gen_range(-1.0..1.0) + 0.1);
        let l = loss_of(a, b)?;
        if !(0.0..=4.0).contains(&l) {
            return Err(format!("random-pair loss {l} escaped [0, 4]"));
        }
    }
    for l in &losses {
        if !(0.0..=4.0).contains(l) {
            return Err(format!("training loss {l} escaped [0, 4]"));
        }
    }

    Ok(format!(
        "teacher bitwise frozen over 3 steps; EMA matches τ^k·φ₀ at k = {k}; \
         endpoints 0/2/4 exact to 1e-12"
    ))
}

// ---------------------------------------------------------------------------
// Criteria 4–7 share a dataset and a pinned training protocol
// ---------------------------------------------------------------------------

/// Seeds for the repeated-training criteria.
const PROTOCOL_SEEDS: [u64; 3] = [1, 2, 3];

/// Accuracy floors for criterion 4 (fractions, not percent).
const FLOOR_PPR: f64 = 0.78;
const FLOOR_SPLIT: f64 = 0.77;
/// Per-seed training budget for criterion 4, in seconds.
const BUDGET_PER_SEED: f64 = 30.0 * 60.0;
/// Criterion 5: collapse floors and the minimum trained-vs-untrained gap.
const FLOOR_MEAN_STD: f64 = 1e-3;
const FLOOR_EFFECTIVE_RANK: f64 = 10.0;
const MIN_UNTRAINED_GAP: f64 = 0.05;
/// Criterion 6: max tolerated accuracy shift under feature permutation.
const MAX_PERMUTATION_SHIFT: f64 = 0.02 + 1e-9;
/// Criterion 7: cluster count, batch count, accuracy band, and the slack
/// factor on the per-batch dense-diffusion allocation bound.
const CLUSTER_K: usize = 16;
const CLUSTER_B: usize = 4;
const MAX_CLUSTER_SHIFT: f64 = 0.03 + 1e-9;
const ALLOC_SLACK: usize = 4;

/// The pinned stand-in dataset: five planted communities with noisy
/// bag-of-words features, sized so the probe's test split (70% of 2000
/// nodes) measures accuracy at sub-point granularity, with enough feature
/// noise (45% of nodes carry another class's vocabulary) that smoothing
/// the graph genuinely beats raw features.
fn standin_config() -> SynthConfig {
    SynthConfig {
        num_nodes: 2000,
        num_classes: 5,
        num_features: 300,
        avg_degree: 4.0,
        intra_edge_fraction: 0.88,
        features_per_node: 12,
        feature_overlap: 0.35,
        label_noise: 0.45,
        split_fractions: (0.15, 0.15, 0.7),
        seed: 0,
    }
}

/// The pinned training protocol for criteria 4–7: the default
/// architecture and optimizer, 400 epochs, no mid-run validation probing
/// (the final parameters are the artifact, keeping every run's epoch
/// count identical).
fn protocol_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 400,
        eval_every: 0,
        layer_widths: vec![256, 64],
        predictor_hidden: 256,
        seed,
        ..TrainConfig::default()
    }
}

struct ProtocolRun {
    acc: f64,
    secs: f64,
    mean_std: f64,
    effective_rank: f64,
}

struct Protocol {
    g: Graph,
    dataset: String,
    ppr: Vec<ProtocolRun>,
    split: Vec<ProtocolRun>,
    /// Probe accuracy of a randomly initialized encoder, one per seed.
    untrained: Vec<f64>,
}

impl Protocol {
    fn run(scratch: &Path) -> Result<Protocol, String> {
        let (g, dataset) = acceptance_dataset(scratch)?;
        let mut ppr = Vec::new();
        let mut split = Vec::new();
        let mut untrained = Vec::new();
        for &seed in &PROTOCOL_SEEDS {
            ppr.push(trained_run(&g, AugVariant::Ppr, seed)?);
            split.push(trained_run(&g, AugVariant::Split, seed)?);
            untrained.push(untrained_accuracy(&g, seed)?);
        }
        Ok(Protocol { g, dataset, ppr, split, untrained })
    }
}

/// Use a real `cora/` bundle when `SELFGNN_DATA_DIR` provides one;
/// otherwise synthesize the stand-in and round-trip it through the bundle
/// format on disk.
fn acceptance_dataset(scratch: &Path) -> Result<(Graph, String), String> {
    if let Ok(root) = std::env::var("SELFGNN_DATA_DIR") {
        let dir = Path::new(&root).join("cora");
        if dir.is_dir() {
            let g = load_graph_bundle(&dir).map_err(|e| format!("load {}: {e}", dir.display()))?;
            return Ok((g, "cora".into()));
        }
    }
    let g = synthetic_graph(&standin_config()).map_err(|e| e.to_string())?;
    let dir = scratch.join("standin");
    save_graph_bundle(&g, &dir).map_err(|e| e.to_string())?;
    let g = load_graph_bundle(&dir).map_err(|e| e.to_string())?;
    Ok((g, "standin".into()))
}

/// Train/test probe accuracy on the graph's labeled split.
fn probe_accuracy(g: &Graph, emb: &Matrix<f64>, seed: u64) -> Result<f64, String> {
    let probe = ProbeConfig { seed, ..ProbeConfig::default() };
    let mut tr = Vec::new();
    let mut te = Vec::new();
    for (i, s) in g.split.iter().enumerate() {
        match s {
            Split::Train if g.labels[i].is_some() => tr.push(i),
            Split::Test if g.labels[i].is_some() => te.push(i),
            _ => {}
        }
    }
    if tr.is_empty() || te.is_empty() {
        return Err("dataset lacks a labeled train/test split".into());
    }
    let y = |idx: &[usize]| -> Vec<u32> { idx.iter().map(|&i| g.labels[i].unwrap()).collect() };
    logistic_probe(&emb.gather_rows(&tr), &y(&tr), &emb.gather_rows(&te), &y(&te), &probe)
        .map_err(|e| e.to_string())
}

fn trained_run(g: &Graph, variant: AugVariant, seed: u64) -> Result<ProtocolRun, String> {
    let spec = AugSpec::new(variant);
    let cfg = protocol_config(seed);
    let started = Instant::now();
    let out = train::<f32>(g, &spec, &cfg).map_err(|e| format!("train {} seed {seed}: {e}", variant.name()))?;
    let secs = started.elapsed().as_secs_f64();
    let views = make_views::<f32>(g, &spec).map_err(|e| e.to_string())?;
    let mut params = out.params;
    let emb = embed(&mut params, &views, false).map_err(|e| e.to_string())?.cast::<f64>();
    let acc = probe_accuracy(g, &emb, seed)?;
    let collapse = collapse_metrics(&emb).map_err(|e| e.to_string())?;
    Ok(ProtocolRun { acc, secs, mean_std: collapse.mean_std, effective_rank: collapse.effective_rank })
}

/// Probe accuracy of a freshly initialized (never trained) model on the
/// same views the trained runs use.
fn untrained_accuracy(g: &Graph, seed: u64) -> Result<f64, String> {
    let spec = AugSpec::new(AugVariant::Ppr);
    let cfg = protocol_config(seed);
    let views = make_views::<f32>(g, &spec).map_err(|e| e.to_string())?;
    let mut mcfg = ModelConfig::new(views.student.x.cols());
    mcfg.layer_widths = cfg.layer_widths.clone();
    mcfg.predictor_hidden = cfg.predictor_hidden;
    let mut params = init_params::<f32>(&mcfg, seed).map_err(|e| e.to_string())?;
    let emb = embed(&mut params, &views, false).map_err(|e| e.to_string())?.cast::<f64>();
    probe_accuracy(g, &emb, seed)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_accuracy(p: &Protocol) -> Criterion {
    let ppr_mean = mean(p.ppr.iter().map(|r| r.acc));
    let split_mean = mean(p.split.iter().map(|r| r.acc));
    let slowest = p
        .ppr
        .iter()
        .chain(&p.split)
        .map(|r| r.secs)
        .fold(0.0, f64::max);
    let mut over = Vec::new();
    if !(ppr_mean >= FLOOR_PPR) {
        over.push(format!("ppr mean {ppr_mean:.4} < {FLOOR_PPR}"));
    }
    if !(split_mean >= FLOOR_SPLIT) {
        over.push(format!("split mean {split_mean:.4} < {FLOOR_SPLIT}"));
    }
    if !(slowest <= BUDGET_PER_SEED) {
        over.push(format!("slowest seed took {slowest:.0}s > {BUDGET_PER_SEED:.0}s"));
    }
    if !over.is_empty() {
        return Err(over.join("; "));
    }
    Ok(format!(
        "[{}] ppr mean {ppr_mean:.4} (floor {FLOOR_PPR}), split mean {split_mean:.4} \
         (floor {FLOOR_SPLIT}), slowest seed {slowest:.0}s",
        p.dataset
    ))
}

fn criterion_non_collapse(p: &Protocol) -> Criterion {
    for (variant, runs) in [("ppr", &p.ppr), ("split", &p.split)] {
        for (run, seed) in runs.iter().zip(PROTOCOL_SEEDS) {
            if !(run.mean_std > FLOOR_MEAN_STD) {
                return Err(format!(
                    "{variant} seed {seed}: mean per-dimension std {:.2e} ≤ {FLOOR_MEAN_STD:.0e}",
                    run.mean_std
                ));
            }
            if !(run.effective_rank > FLOOR_EFFECTIVE_RANK) {
                return Err(format!(
                    "{variant} seed {seed}: effective rank {:.1} ≤ {FLOOR_EFFECTIVE_RANK}",
                    run.effective_rank
                ));
            }
        }
    }
    let trained = mean(p.ppr.iter().map(|r| r.acc));
    let untrained = mean(p.untrained.iter().copied());
    let gap = trained - untrained;
    if !(gap >= MIN_UNTRAINED_GAP) {
        return Err(format!(
            "trained {trained:.4} vs untrained {untrained:.4}: gap {gap:.4} < {MIN_UNTRAINED_GAP}"
        ));
    }
    let worst_std = p.ppr.iter().chain(&p.split).map(|r| r.mean_std).fold(f64::INFINITY, f64::min);
    let worst_rank = p
        .ppr
        .iter()
        .chain(&p.split)
        .map(|r| r.effective_rank)
        .fold(f64::INFINITY, f64::min);
    Ok(format!(
        "min mean-std {worst_std:.3}, min effective rank {worst_rank:.1}, \
         untrained gap {:.1} points",
        gap * 100.0
    ))
}

/// Retrains the split variant under five pinned feature permutations and
/// compares each probe accuracy to the unpermuted baseline.
fn criterion_split_permutation(p: &Protocol) -> Criterion {
    let baseline = p.split[0].acc;
    let seed = PROTOCOL_SEEDS[0];
    let mut shifts = Vec::new();
    for trial in 1..=5 {
        let mut rng = named_rng(seed, &format!("split-perm-{trial}"));
        let perm = random_permutation(p.g.num_features(), &mut rng);
        let mut pg = p.g.clone();
        pg.features = permute_features(&p.g.features, &perm).map_err(|e| e.to_string())?;
        let run = trained_run(&pg, AugVariant::Split, seed)?;
        shifts.push(run.acc - baseline);
    }
    let max_shift = shifts.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let listed: Vec<String> = shifts.iter().map(|d| format!("{:+.2}", d * 100.0)).collect();
    if !(max_shift <= MAX_PERMUTATION_SHIFT) {
        return Err(format!(
            "max shift {:.2} points > 2 (per-trial: {})",
            max_shift * 100.0,
            listed.join(", ")
        ));
    }
    Ok(format!(
        "5 permutations, shifts {} points, max {:.2} ≤ 2",
        listed.join(", "),
        max_shift * 100.0
    ))
}

/// Clustered training must track the full-batch run and must never
/// materialize a dense diffusion operator larger than its biggest batch.
fn criterion_clustered(p: &Protocol) -> Criterion {
    let seed = PROTOCOL_SEEDS[0];
    let spec = AugSpec::new(AugVariant::Ppr);
    let cfg = protocol_config(seed);
    // The bound: per-batch solvers hold a couple of square buffers, so the
    // peak must stay within a small multiple of the largest batch squared —
    // and far under the full graph squared, which is the point.
    let partition = partition_graph(&p.g, CLUSTER_K, cfg.seed).map_err(|e| e.to_string())?;
    let groups = merge_clusters(&partition, CLUSTER_B, cfg.seed).map_err(|e| e.to_string())?;
    let largest_batch = groups.iter().map(|b| b.len()).max().unwrap_or(0);

    reset_alloc_peak();
    let started = Instant::now();
    let out = train_clustered::<f32>(&p.g, &spec, &cfg, CLUSTER_K, CLUSTER_B, None)
        .map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let peak = alloc_peak();

    let views = make_views::<f32>(&p.g, &spec).map_err(|e| e.to_string())?;
    let mut params = out.params;
    let emb = embed(&mut params, &views, false).map_err(|e| e.to_string())?.cast::<f64>();
    let acc = probe_accuracy(&p.g, &emb, seed)?;
    let shift = acc - p.ppr[0].acc;

    let n = p.g.num_nodes();
    let mut over = Vec::new();
    if !(shift.abs() <= MAX_CLUSTER_SHIFT) {
        over.push(format!(
            "clustered {acc:.4} vs full-batch {:.4}: shift {:.2} points > 3",
            p.ppr[0].acc,
            shift * 100.0
        ));
    }
    if peak > ALLOC_SLACK * largest_batch * largest_batch {
        over.push(format!(
            "dense-diffusion peak {peak} elements > {ALLOC_SLACK}·{largest_batch}²"
        ));
    }
    if peak >= n * n {
        over.push(format!("dense-diffusion peak {peak} elements ≥ n² = {}", n * n));
    }
    if !over.is_empty() {
        return Err(over.join("; "));
    }
    Ok(format!(
        "k={CLUSTER_K} b={CLUSTER_B}: acc {acc:.4}, shift {:+.2} points (band ±3), \
         diffusion peak {peak} elements ≤ {ALLOC_SLACK}·{largest_batch}² ≪ n² = {}, {secs:.0}s",
        shift * 100.0,
        n * n
    ))
}

// ---------------------------------------------------------------------------
// Criterion 8: end-to-end byte determinism through the CLI
// ---------------------------------------------------------------------------

/// Repeats train / embed / evaluate through the installed binary and
/// compares artifacts byte for byte. The report's wall-time column is a
/// measurement, not a result, so it is stripped before comparison.
fn byte_identical_reruns(scratch: &Path) -> Criterion {
    let bin = env!("CARGO_BIN_EXE_selfgnn");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin)
            .args(args)
            .output()
            .map_err(|e| format!("spawn {bin}: {e}"))?;
        if !out.status.success() {
            return Err(format!(
                "selfgnn {args:?} failed: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        Ok(())
    };
    let read = |p: &Path| -> Result<Vec<u8>, String> {
        std::fs::read(p).map_err(|e| format!("read {}: {e}", p.display()))
    };

    let data = scratch.join("rerun-data");
    run(&[
        "synth", "--out", data.to_str().unwrap(),
        "--nodes", "90", "--classes", "3", "--features", "30", "--seed", "11",
    ])?;
    let cfg_path = scratch.join("rerun.cfg");
    std::fs::write(
        &cfg_path,
        format!(
            "dataset = {}\nepochs = 12\neval_every = 4\nlayer_widths = 12,6\n\
             predictor_hidden = 12\nlr = 0.001\nseed = 11\nvariant = ppr\n",
            data.display()
        ),
    )
    .map_err(|e| e.to_string())?;
    let cfg = cfg_path.to_str().unwrap();

    let (a, b) = (scratch.join("rerun-a"), scratch.join("rerun-b"));
    for out in [&a, &b] {
        run(&["train", "--config", cfg, "--out", out.to_str().unwrap()])?;
    }
    for file in ["history.tsv", "model.ckpt", "config.resolved.cfg"] {
        if read(&a.join(file))? != read(&b.join(file))? {
            return Err(format!("{file} differs between identical train runs"));
        }
    }

    let ckpt = a.join("model.ckpt");
    let (e1, e2) = (scratch.join("rerun-e1"), scratch.join("rerun-e2"));
    for out in [&e1, &e2] {
        run(&[
            "embed", "--config", cfg,
            "--checkpoint", ckpt.to_str().unwrap(),
            "--out", out.to_str().unwrap(),
        ])?;
        run(&[
            "evaluate", "--config", cfg,
            "--checkpoint", ckpt.to_str().unwrap(),
            "--out", out.to_str().unwrap(),
        ])?;
    }
    if read(&e1.join("embeddings.tsv"))? != read(&e2.join("embeddings.tsv"))? {
        return Err("embeddings.tsv differs between identical embed runs".into());
    }
    let strip_wall = |bytes: Vec<u8>| -> Vec<String> {
        String::from_utf8_lossy(&bytes)
            .lines()
            .map(|l| l.rsplit_once('\t').map(|(head, _)| head.to_string()).unwrap_or_default())
            .collect()
    };
    let r1 = strip_wall(read(&e1.join("report.tsv"))?);
    let r2 = strip_wall(read(&e2.join("report.tsv"))?);
    if r1 != r2 {
        return Err("report.tsv differs between identical evaluate runs (net of wall time)".into());
    }
    Ok("train, embed, and evaluate reruns byte-identical (reports compared net of the wall-time column)".into())
}
