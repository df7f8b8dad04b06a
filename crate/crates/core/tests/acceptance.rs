//! Acceptance suite: one test per release criterion, each printing a
//! `criterion N (<name>): PASS` line on success (visible with --nocapture).
//!
//! Run with:
//!   cargo test -p mpcpa-core --test acceptance -- --nocapture

use mpcpa_core::aggregate::{
    aggregate_average, aggregate_vote, bvc_decompose, PredictionSet, VoteMode,
};
use mpcpa_core::audit::{memorization_scan, mia_loss_threshold};
use mpcpa_core::config::ExperimentConfig;
use mpcpa_core::data::{generate_mixture, LabeledDataset, MixtureSpec};
use mpcpa_core::diffusion::{
    diffusion_train, forward_diffuse_step, sample, NoiseSchedule,
};
use mpcpa_core::nn::{cross_entropy_loss, mse_loss, train_classifier, DenseNetwork, Loss, TrainConfig};
use mpcpa_core::protocol::{
    run_centralized_with, run_fedavg, run_mpcpa, run_mpcpa_with, CentralSource, Pipeline,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn pass(n: usize, name: &str) {
    println!("criterion {n} ({name}): PASS");
}

/// Fast-but-valid config for the exact-count criterion.
fn count_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::benchmark_default();
    cfg.total_count = 90;
    cfg.gen_count = 2;
    cfg.diffusion.t_steps = 10;
    cfg.diffusion.hidden_dims = vec![8];
    cfg.diffusion.epochs = Some(2);
    cfg.classifier.hidden_dims = vec![];
    cfg.classifier.epochs = 1;
    cfg
}

#[test]
fn criterion_1_communication_counts() {
    let cfg = count_config();
    assert_eq!(cfg.n_clients, 3);
    let run = run_mpcpa(&cfg).unwrap();
    let summary = run.ledger.summary();
    assert_eq!(summary.total, 9, "mpcpa with n=3 must record exactly 3n = 9");
    assert_eq!(
        (summary.ddpm_upload, summary.ddpm_package, summary.classifier_upload),
        (3, 3, 3)
    );

    // FedAvg count test on a minimal classifier, 200 rounds.
    let mut fcfg = count_config();
    fcfg.fedavg.iters = 200;
    fcfg.fedavg.local_epochs = 1;
    let run = run_fedavg(&fcfg).unwrap();
    assert_eq!(
        run.ledger.summary().total,
        1200,
        "fedavg with n=3, iters=200 must record exactly 2n*iters = 1200"
    );
    pass(1, "communication counts 3n and 2n*iters, zero tolerance");
}

#[test]
fn criterion_2_gradient_correctness() {
    // >= 20 random small networks, every parameter checked against central
    // finite differences at step 1e-5.
    let mut rng = ChaCha8Rng::seed_from_u64(20_24);
    let shapes: [&[usize]; 4] = [&[3, 5, 4], &[4, 8, 3], &[6, 10, 4], &[2, 16, 2]];
    let step = 1e-5;
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for case in 0..20 {
        let dims = shapes[case % shapes.len()];
        let net = DenseNetwork::init(dims, 7_000 + case as u64).unwrap();
        assert!(net.param_count() <= 200, "criterion caps nets at 200 params");
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..*dims.last().unwrap())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let label = case % dims.last().unwrap();
        for loss in [Loss::Mse { target: &target }, Loss::CrossEntropy { label }] {
            let (_, analytic) = net.backward(&x, loss).unwrap();
            let eval = |net: &DenseNetwork| -> f64 {
                let out = net.forward(&x).unwrap();
                match loss {
                    Loss::Mse { target } => mse_loss(&out, target).unwrap(),
                    Loss::CrossEntropy { label } => cross_entropy_loss(&out, label).unwrap(),
                }
            };
            for li in 0..net.layers().len() {
                let n_w = net.layers()[li].in_dim() * net.layers()[li].out_dim();
                for (is_bias, count) in [(false, n_w), (true, net.layers()[li].out_dim())] {
                    for pi in 0..count {
                        let mut plus = net.clone();
                        let mut minus = net.clone();
                        let nudge = |net: &mut DenseNetwork, delta: f64| {
                            let mut layers = net.layers().to_vec();
                            let layer = &mut layers[li];
                            let (w, b) = (layer.weights_vec(), layer.biases_vec());
                            let mut w = w.to_vec();
                            let mut b = b.to_vec();
                            if is_bias {
                                b[pi] += delta;
                            } else {
                                w[pi] += delta;
                            }
                            layers[li] = mpcpa_core::nn::Layer::new(
                                layer.in_dim(),
                                layer.out_dim(),
                                layer.activation(),
                                w,
                                b,
                            )
                            .unwrap();
                            *net = DenseNetwork::from_layers(layers).unwrap();
                        };
                        nudge(&mut plus, step);
                        nudge(&mut minus, -step);
                        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
                        let g = &analytic.layers[li];
                        let a = if is_bias {
                            g.d_biases[pi]
                        } else {
                            g.d_weights[pi]
                        };
                        let diff = (a - numeric).abs();
                        if diff > 1e-8 {
                            let rel = diff / a.abs().max(numeric.abs());
                            worst = worst.max(rel);
                            assert!(
                                rel < 1e-4,
                                "case {case} layer {li} param {pi}: analytic {a} vs numeric {numeric}"
                            );
                        }
                        checked += 1;
                    }
                }
            }
        }
    }
    assert!(checked > 20 * 40, "must exercise every parameter");
    pass(2, "analytic gradients match finite differences < 1e-4");
    println!("  checked {checked} parameters, worst relative error {worst:.3e}");
}

#[test]
fn criterion_3_schedule_and_forward_consistency() {
    // Cumulative product against an independent reverse-order product,
    // relative 1e-12, for T up to 1000.
    for t_steps in [2, 10, 200, 1000] {
        let s = NoiseSchedule::linear(t_steps, 1e-4, 0.02).unwrap();
        for t in 1..=t_steps {
            let mut oracle = 1.0_f64;
            for u in (1..=t).rev() {
                oracle *= 1.0 - s.beta(u).unwrap();
            }
            let got = s.alpha_bar(t).unwrap();
            assert!(
                (got - oracle).abs() <= 1e-12 * oracle.abs().max(1e-300),
                "T={t_steps} t={t}: alpha_bar {got} vs product {oracle}"
            );
        }
    }

    // Monte-Carlo marginal of the iterated per-step chain against the
    // closed form, 4 standard errors at N = 10_000.
    let t_steps = 200;
    let schedule = NoiseSchedule::linear(t_steps, 1e-4, 0.02).unwrap();
    let probe = 100;
    let x0 = [1.0, -0.5];
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(31_337);
    let mut sums = [0.0_f64; 2];
    let mut sq_sums = [0.0_f64; 2];
    for _ in 0..n {
        let mut x = x0.to_vec();
        for t in 1..=probe {
            let z: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            x = forward_diffuse_step(&x, t, &schedule, &z).unwrap();
        }
        for d in 0..2 {
            sums[d] += x[d];
            sq_sums[d] += x[d] * x[d];
        }
    }
    let ab = schedule.alpha_bar(probe).unwrap();
    let want_var = 1.0 - ab;
    for d in 0..2 {
        let mean = sums[d] / n as f64;
        let want_mean = ab.sqrt() * x0[d];
        let se_mean = want_var.sqrt() / (n as f64).sqrt();
        assert!(
            (mean - want_mean).abs() < 4.0 * se_mean,
            "dim {d}: mean {mean} vs {want_mean} (4se = {})",
            4.0 * se_mean
        );
        let var = sq_sums[d] / n as f64 - mean * mean;
        let se_var = want_var * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!(
            (var - want_var).abs() < 4.0 * se_var,
            "dim {d}: var {var} vs {want_var} (4se = {})",
            4.0 * se_var
        );
    }
    pass(3, "schedule product to 1e-12 and Monte-Carlo marginal within 4 SE");
}

#[test]
fn criterion_4_bvc_identity() {
    // Hand-computed M=2 case.
    let outputs = vec![vec![vec![0.0], vec![2.0]], vec![vec![2.0], vec![0.0]]];
    let report = bvc_decompose(&outputs, &[1.0]).unwrap();
    assert!((report.bias_sq).abs() < 1e-15);
    assert!((report.variance - 1.0).abs() < 1e-15);
    assert!((report.covariance + 1.0).abs() < 1e-15);
    assert!(report.ensemble_mse.abs() < 1e-15);
    assert!(report.reconstruction_residual <= 1e-10);

    // 100 random instances with M <= 5, R <= 20.
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for case in 0..100 {
        let m = rng.random_range(1..=5);
        let r = rng.random_range(2..=20);
        let s = rng.random_range(1..=6);
        let outputs: Vec<Vec<Vec<f64>>> = (0..r)
            .map(|_| {
                (0..m)
                    .map(|_| (0..s).map(|_| rng.random_range(-10.0..10.0)).collect())
                    .collect()
            })
            .collect();
        let targets: Vec<f64> = (0..s).map(|_| rng.random_range(-10.0..10.0)).collect();
        let report = bvc_decompose(&outputs, &targets).unwrap();
        let scale = report.ensemble_mse.max(1.0);
        assert!(
            report.reconstruction_residual <= 1e-10 * scale,
            "case {case} (M={m}, R={r}): residual {} over scale {scale}",
            report.reconstruction_residual
        );
    }
    pass(4, "ensemble error decomposition identity <= 1e-10 * scale");
}

#[test]
fn criterion_5_generation_quality() {
    // Default config, one client-shard-sized training set.
    let cfg = ExperimentConfig::benchmark_default();
    let shard_size = (cfg.total_count as f64 * cfg.split.train / cfg.n_clients as f64) as usize;
    let data = generate_mixture(&cfg.mixture, shard_size, 2_026).unwrap();
    let dcfg = cfg.diffusion_config(data.len(), 90_210);
    let (denoiser, _) = diffusion_train(&data, &dcfg).unwrap();
    let schedule = dcfg.schedule().unwrap();

    for class in 0..2 {
        let points = sample(&denoiser, &schedule, class, 500, 555 + class as u64).unwrap();
        let target = &cfg.mixture.means[class];
        // Empirical mean within 0.15 per coordinate of the class mean.
        for d in 0..2 {
            let mean = points.iter().map(|p| p[d]).sum::<f64>() / points.len() as f64;
            assert!(
                (mean - target[d]).abs() < 0.15,
                "class {class} dim {d}: sample mean {mean} vs {}",
                target[d]
            );
        }
        // Bayes rule for equal-prior isotropic blobs at ±(1,1) is the
        // nearest-mean rule; the boundary is x₁ + x₂ = 0.
        let side = if class == 0 { -1.0 } else { 1.0 };
        let purity = points
            .iter()
            .filter(|p| (p[0] + p[1]) * side > 0.0)
            .count() as f64
            / points.len() as f64;
        assert!(
            purity >= 0.95,
            "class {class}: Bayes purity {purity} below 0.95"
        );
    }
    pass(5, "per-class sample mean within 0.15 and Bayes purity >= 95%");
}

#[test]
fn criterion_6_label_skew_trend() {
    // Label-skew partition (alpha = 0.3, n = 3); over 5 seeds the mean
    // one-shot ensemble test accuracy must beat the mean original-only A_k
    // accuracy, and the B_k arms must beat the A_k arms on average.
    let mut cfg = ExperimentConfig::benchmark_default();
    cfg.partition.mode = "label_skew".into();
    cfg.partition.concentration = Some(0.3);

    let mut a_accs = Vec::new();
    let mut b_accs = Vec::new();
    let mut ensemble_accs = Vec::new();
    for seed in [101, 102, 103, 104, 105] {
        cfg.seed = seed;
        let pipeline = Pipeline::build(&cfg).unwrap();
        let run = run_mpcpa_with(&pipeline, &cfg).unwrap();
        ensemble_accs.push(run.ensemble_accuracy.test);
        for k in 0..cfg.n_clients {
            let a = run_centralized_with(&pipeline, &cfg, CentralSource::SingleClient(k)).unwrap();
            a_accs.push(a.accuracy.test);
            // The protocol's client classifiers are exactly the B_k models.
            b_accs.push(run.per_client_accuracy[k].test);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb, me) = (mean(&a_accs), mean(&b_accs), mean(&ensemble_accs));
    println!("  mean test accuracy: A = {ma:.4}, B = {mb:.4}, ensemble = {me:.4}");
    assert!(
        me >= ma,
        "ensemble mean {me} must be >= single-client mean {ma}"
    );
    assert!(mb >= ma, "B mean {mb} must be >= A mean {ma}");
    pass(6, "one-shot ensemble and B arms beat A arms under label skew");
}

#[test]
fn criterion_7_memorization_audit() {
    // Planted verbatim training point flagged at delta = 0.1 with distance 0.
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let mk = |count: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    };
    let train_points = mk(50, &mut rng);
    let mut gen_points = mk(49, &mut rng);
    gen_points.push(train_points[31].clone());
    let training = LabeledDataset::new(train_points, vec![0; 50], 4, 1).unwrap();
    let generated = LabeledDataset::new(gen_points, vec![0; 50], 4, 1).unwrap();
    let report = memorization_scan(&generated, &training, 0.1).unwrap();
    assert_eq!(report.rows[49].min_distance, 0.0, "verbatim copy at distance 0");
    assert!(report.rows[49].flagged);
    assert_eq!(report.rows[49].nearest_index, 31);

    // 50x50 random instance matches the brute-force oracle row for row.
    for (g, row) in report.rows.iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut best_idx = 0;
        for t in 0..training.len() {
            let d = mpcpa_core::audit::l2_distance(generated.point(g), training.point(t)).unwrap();
            if d < best {
                best = d;
                best_idx = t;
            }
        }
        assert_eq!(row.min_distance, best, "row {g} distance");
        assert_eq!(row.nearest_index, best_idx, "row {g} index");
        assert_eq!(row.flagged, best <= 0.1, "row {g} flag");
    }
    pass(7, "planted duplicate flagged; scan equals brute force row-for-row");
}

#[test]
fn criterion_8_mia_sanity() {
    // Overfit attack: <= 20 training points, many epochs.
    let pool = generate_mixture(&MixtureSpec::benchmark_default(), 1040, 88).unwrap();
    let members = pool.subset(&(0..20).collect::<Vec<_>>());
    let nonmembers = pool.subset(&(20..40).collect::<Vec<_>>());
    let cfg = TrainConfig {
        learning_rate: 0.2,
        epochs: 1500,
        batch_size: 4,
        seed: 9,
    };
    let (overfit, _) = train_classifier(&members, &[32], &cfg).unwrap();
    let report = mia_loss_threshold(&overfit, &members, &nonmembers, None).unwrap();
    assert!(
        report.best_accuracy > 0.55,
        "attack on an overfit classifier must exceed 0.55, got {}",
        report.best_accuracy
    );
    println!("  overfit-attack accuracy: {:.4}", report.best_accuracy);

    // Null attack: fresh model, members and non-members drawn identically;
    // swept accuracy must average 0.5 ± 0.05 over 20 seeds.
    let mut accs = Vec::new();
    for seed in 0..20u64 {
        let null_pool = generate_mixture(&MixtureSpec::benchmark_default(), 1000, 500 + seed).unwrap();
        let members = null_pool.subset(&(0..500).collect::<Vec<_>>());
        let nonmembers = null_pool.subset(&(500..1000).collect::<Vec<_>>());
        let fresh = DenseNetwork::init(&[2, 32, 2], seed).unwrap();
        let report = mia_loss_threshold(&fresh, &members, &nonmembers, None).unwrap();
        accs.push(report.best_accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    println!("  null-attack mean accuracy over 20 seeds: {mean:.4}");
    assert!(
        (mean - 0.5).abs() <= 0.05,
        "null attack must average 0.5 ± 0.05, got {mean}"
    );
    pass(8, "mia separates an overfit model and stays null on a fresh one");
}

#[test]
fn criterion_9_aggregation_coherence() {
    // Unanimous prediction sets: averaging and every voting mode agree.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut rows = Vec::new();
    for _ in 0..40 {
        let a: f64 = rng.random_range(0.0..1.0);
        let b: f64 = rng.random_range(0.0..(1.0 - a));
        rows.push(vec![a, b, 1.0 - a - b]);
    }
    let preds = PredictionSet::new(vec![rows.clone(), rows.clone(), rows]).unwrap();
    let averaged = aggregate_average(&preds, None).unwrap();
    for row in &averaged.probs {
        assert!(row.iter().all(|&p| p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    for mode in [
        VoteMode::Relative,
        VoteMode::Absolute,
        VoteMode::Weighted(vec![0.2, 0.5, 0.3]),
    ] {
        assert_eq!(
            aggregate_vote(&preds, &mode).unwrap(),
            averaged.labels,
            "unanimous classifiers must agree across {mode:?}"
        );
    }

    // Zero-generation protocol reproduces the single-client baselines
    // bitwise under shared seeds.
    let mut cfg = count_config();
    cfg.gen_count = 0;
    cfg.classifier.hidden_dims = vec![8];
    cfg.classifier.epochs = 5;
    let pipeline = Pipeline::build(&cfg).unwrap();
    let run = run_mpcpa_with(&pipeline, &cfg).unwrap();
    for k in 0..cfg.n_clients {
        let central =
            run_centralized_with(&pipeline, &cfg, CentralSource::SingleClient(k)).unwrap();
        assert_eq!(
            run.clients[k].classifier, central.classifier,
            "client {k}: zero-generation run must equal its baseline bitwise"
        );
        assert_eq!(run.per_client_accuracy[k], central.accuracy);
    }
    pass(9, "voting agrees with averaging when unanimous; zero-gen is bitwise A_k");
}
