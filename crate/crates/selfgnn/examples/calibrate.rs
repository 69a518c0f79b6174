//! Scratch harness for sizing the acceptance stand-in protocol. Not part
//! of the test suite.

use std::time::Instant;

use selfgnn::datagen::{synthetic_graph, SynthConfig};
use selfgnn::eval::{collapse_metrics, logistic_probe, ProbeConfig};
use selfgnn::graph::{Graph, Split};
use selfgnn::model::{init_params, ModelConfig};
use selfgnn::trainer::{embed, make_views, train, AugSpec, AugVariant, TrainConfig};

fn probe_acc(emb: &selfgnn::Matrix<f64>, g: &Graph, probe: &ProbeConfig) -> f64 {
    let mut tr = Vec::new();
    let mut te = Vec::new();
    for (i, s) in g.split.iter().enumerate() {
        match s {
            Split::Train if g.labels[i].is_some() => tr.push(i),
            Split::Test if g.labels[i].is_some() => te.push(i),
            _ => {}
        }
    }
    let y = |idx: &[usize]| -> Vec<u32> { idx.iter().map(|&i| g.labels[i].unwrap()).collect() };
    logistic_probe(&emb.gather_rows(&tr), &y(&tr), &emb.gather_rows(&te), &y(&te), probe).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let label_noise: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let w1: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(256);
    let w2: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(64);
    let variant: String = args.get(5).cloned().unwrap_or_else(|| "ppr".into());
    let seed: u64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1);
    let intra: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0.93);
    let degree: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(7.0);

    let num_nodes: usize = std::env::var("CALIBRATE_N")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(800);
    let test_fraction: f64 = std::env::var("CALIBRATE_TEST_FRAC")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.2);
    let synth = SynthConfig {
        num_nodes,
        label_noise,
        intra_edge_fraction: intra,
        avg_degree: degree,
        split_fractions: (0.85 - test_fraction, 0.15, test_fraction),
        seed: 0,
        ..SynthConfig::default()
    };
    let g = synthetic_graph(&synth).unwrap();
    println!(
        "graph: {} nodes, {} edges, {} features, {} classes",
        g.num_nodes(),
        g.num_edges(),
        g.num_features(),
        g.num_classes
    );

    let probe = ProbeConfig { seed, ..ProbeConfig::default() };

    // Raw-feature probe for reference.
    let raw_acc = probe_acc(&g.features, &g, &probe);
    println!("raw-feature probe: {raw_acc:.4}");

    let eval_every: usize = std::env::var("CALIBRATE_EVAL_EVERY")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(25);
    let cfg = TrainConfig {
        epochs,
        eval_every,
        layer_widths: vec![w1, w2],
        predictor_hidden: w1,
        seed,
        symmetrized: std::env::var("CALIBRATE_SYM").is_ok(),
        dropout: std::env::var("CALIBRATE_DROPOUT")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0.2),
        ..TrainConfig::default()
    };
    let spec = AugSpec::new(AugVariant::parse(&variant).unwrap());

    // Untrained baseline: random init, straight to embedding.
    let views = make_views::<f32>(&g, &spec).unwrap();
    let mcfg = {
        let mut m = ModelConfig::new(views.student.x.cols());
        m.layer_widths = cfg.layer_widths.clone();
        m.predictor_hidden = cfg.predictor_hidden;
        m
    };
    let mut untrained = init_params::<f32>(&mcfg, seed).unwrap();
    let emb0 = embed(&mut untrained, &views, false).unwrap().cast::<f64>();
    let acc0 = probe_acc(&emb0, &g, &probe);
    let m0 = collapse_metrics(&emb0).unwrap();
    println!("untrained: acc {acc0:.4}, mean_std {:.4}, erank {:.1}", m0.mean_std, m0.effective_rank);

    let started = Instant::now();
    let out = train::<f32>(&g, &spec, &cfg).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let mut params = out.params;
    let emb = embed(&mut params, &views, false).unwrap().cast::<f64>();
    let acc = probe_acc(&emb, &g, &probe);
    let m = collapse_metrics(&emb).unwrap();
    println!(
        "trained ({variant}, {epochs} ep, [{w1},{w2}], noise {label_noise}, seed {seed}): acc {acc:.4}, best_val {:?}, mean_std {:.4}, erank {:.1}, {secs:.1}s",
        out.best_val,
        m.mean_std,
        m.effective_rank
    );

    match std::env::var("CALIBRATE_EXTRA").as_deref() {
        Ok("cluster") => {
            let started = Instant::now();
            selfgnn::diffusion::reset_alloc_peak();
            let out = selfgnn::cluster::train_clustered::<f32>(&g, &spec, &cfg, 16, 4, None).unwrap();
            let mut params = out.params;
            let emb = embed(&mut params, &views, false).unwrap().cast::<f64>();
            let cacc = probe_acc(&emb, &g, &probe);
            println!(
                "clustered k=16 b=4: acc {cacc:.4} (full {acc:.4}, delta {:+.4}), {:.1}s, diffusion peak {} elems",
                cacc - acc,
                started.elapsed().as_secs_f64(),
                selfgnn::diffusion::alloc_peak(),
            );
        }
        Ok("perm") => {
            let (cv_base, _) = selfgnn::eval::kfold_accuracy(&emb, &g.labels, &probe).unwrap();
            println!("baseline: acc {acc:.4}, cv {cv_base:.4}");
            for trial in 1..=5 {
                let mut rng = selfgnn::rng::named_rng(seed, &format!("split-perm-{trial}"));
                let perm = selfgnn::features::random_permutation(g.num_features(), &mut rng);
                let mut pg = g.clone();
                pg.features = selfgnn::features::permute_features(&g.features, &perm).unwrap();
                let out = train::<f32>(&pg, &spec, &cfg).unwrap();
                let mut params = out.params;
                let pviews = make_views::<f32>(&pg, &spec).unwrap();
                let pemb = embed(&mut params, &pviews, false).unwrap().cast::<f64>();
                let pacc = probe_acc(&pemb, &pg, &probe);
                let (pcv, _) = selfgnn::eval::kfold_accuracy(&pemb, &pg.labels, &probe).unwrap();
                println!(
                    "perm {trial}: acc {pacc:.4} (delta {:+.4}), cv {pcv:.4} (delta {:+.4})",
                    pacc - acc,
                    pcv - cv_base
                );
            }
        }
        _ => {}
    }
}
