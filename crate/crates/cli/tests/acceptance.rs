//! Acceptance suite: one check per stated requirement, each printing a PASS
//! line with the measured values.
//!
//! Run with:
//!
//! ```text
//! cargo test -p symsgd-cli --test acceptance -- --nocapture --test-threads=1
//! ```
//!
//! `check_07_08` trains on the real MNIST IDX files for hours and is
//! therefore `#[ignore]`d; point `SYMSGD_DATA_DIR` at the data and add
//! `-- --ignored` to run it (see the README).

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use symsgd::data::{synthetic_dataset, write_idx_images, write_idx_labels, Dataset};
use symsgd::harness::{run_experiment, ExperimentConfig};
use symsgd::linalg::Matrix;
use symsgd::network::{
    backward, compare_grads_fd, forward, gradcheck, init_params, kink_distance, random_batch,
    ArchConfig, GradcheckOptions, Mode, NetworkParams,
};
use symsgd::optim::{
    params_rel_diff, run_updates, sm_update_left, sm_update_right, un_project, un_update,
    LrSchedule, ScheduleKind, UpdateRule,
};
use symsgd::rng::{derive_seed, SplitMix64};
use symsgd::symmetry::{
    apply_reparam, check_gradient_scaling, check_loss_invariance, random_reparam,
};

const SUITE: u64 = 0x5EED;

fn arch(batchnorm: bool, depth: usize, filters: usize, input_dim: usize) -> ArchConfig {
    let mut cfg = if batchnorm {
        ArchConfig::batch_norm(depth, filters, input_dim, 10)
    } else {
        ArchConfig::plain(depth, filters, input_dim, 10)
    };
    // Exact normalization: a positive epsilon breaks the exact symmetry and
    // leaves epsilon-scale gradient components below the finite-difference
    // noise floor. Training uses the 1e-5 default; the oracles use 0.
    cfg.bn_epsilon = 0.0;
    cfg
}

/// Generic (non-unit-norm) parameters: unit-norm init with every filter row
/// rescaled by a seeded log-uniform factor.
fn generic_params(cfg: &ArchConfig, seed: u64) -> NetworkParams<f64> {
    let mut params = init_params::<f64>(cfg, seed);
    let mut rng = SplitMix64::new(seed ^ 0xABCD);
    for w in &mut params.weights {
        let scales: Vec<f64> = (0..w.rows())
            .map(|_| rng.next_range(-1.0, 1.0).exp())
            .collect();
        *w = w.scale_rows(&scales);
    }
    params
}

#[test]
fn check_01_loss_invariance_under_reparameterization() {
    let started = Instant::now();
    for batchnorm in [false, true] {
        let family = if batchnorm { "batchnorm" } else { "plain" };
        let mut worst_loss: f64 = 0.0;
        let mut worst_prob: f64 = 0.0;
        for k in 0..100u64 {
            let depth = if k % 2 == 0 { 2 } else { 4 };
            let cfg = arch(batchnorm, depth, 8, 20);
            let params = generic_params(&cfg, derive_seed(SUITE, "inv-params", k));
            let rep = random_reparam::<f64>(&cfg, derive_seed(SUITE, "inv-rep", k), (0.1, 10.0));
            let (input, labels) = random_batch::<f64>(&cfg, 8, derive_seed(SUITE, "inv-batch", k));
            let report = check_loss_invariance(&cfg, &params, &rep, &input, &labels, Mode::Train);
            worst_loss = worst_loss.max(report.loss_diff);
            worst_prob = worst_prob.max(report.max_prob_diff);
        }
        assert!(worst_loss < 1e-10, "{family}: |dL| {worst_loss}");
        assert!(worst_prob < 1e-10, "{family}: |dp| {worst_prob}");
        println!(
            "PASS loss invariance ({family}): max |dL| {worst_loss:.3e}, \
             max |dprob| {worst_prob:.3e} over 100 triples (< 1e-10)"
        );
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "invariance suite took {elapsed:.1}s");
    println!("PASS loss invariance runtime: {elapsed:.2}s (< 60s)");
}

#[test]
fn check_02_gradient_oracle_and_mutation_detection() {
    let started = Instant::now();
    let opts = GradcheckOptions::default();
    for batchnorm in [false, true] {
        for depth in [2usize, 4] {
            let cfg = arch(batchnorm, depth, 4, 12);
            let label = format!(
                "{} depth {depth}",
                if batchnorm { "batchnorm" } else { "plain" }
            );
            let report =
                gradcheck::<f64>(&cfg, 8, derive_seed(SUITE, "oracle", depth as u64), &opts);
            assert!(
                report.max_rel_err < 1e-6,
                "{label}: max rel err {}",
                report.max_rel_err
            );
            println!(
                "PASS gradient oracle ({label}): max rel err {:.3e} over {} tensors (< 1e-6, {} resamples)",
                report.max_rel_err,
                report.per_tensor.len(),
                report.resamples
            );

            // Mutation sensitivity: scale every gradient tensor by 1.01 and
            // demand each one is flagged on its own coordinates.
            let (params, input, labels, grads) =
                kink_free_instance(&cfg, derive_seed(SUITE, "mutate", depth as u64));
            let mut corrupted = grads.clone();
            for w in &mut corrupted.weights {
                *w = w.scaled(1.01);
            }
            corrupted.theta = corrupted.theta.scaled(1.01);
            if let Some(bn) = &mut corrupted.bn {
                for layer in bn {
                    for g in layer.scale.iter_mut().chain(layer.shift.iter_mut()) {
                        *g *= 1.01;
                    }
                }
            }
            let report = compare_grads_fd(&cfg, &params, &input, &labels, &corrupted, &opts, SUITE);
            for tensor in &report.per_tensor {
                assert!(
                    tensor.max_rel_err > 1e-3,
                    "{label}: x1.01 mutation of {} not detected ({:.3e})",
                    tensor.name,
                    tensor.max_rel_err
                );
            }
            println!(
                "PASS mutation detection ({label}): every x1.01-corrupted tensor flagged (> 1e-3)"
            );
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient oracle took {elapsed:.1}s");
    println!("PASS gradient oracle runtime: {elapsed:.2}s (< 60s)");
}

fn kink_free_instance(
    cfg: &ArchConfig,
    seed: u64,
) -> (
    NetworkParams<f64>,
    Matrix<f64>,
    Vec<u8>,
    symsgd::network::Gradients<f64>,
) {
    let opts = GradcheckOptions::default();
    for attempt in 0..opts.max_resamples as u64 {
        let params = init_params::<f64>(cfg, derive_seed(seed, "params", attempt));
        let (input, labels) = random_batch::<f64>(cfg, 8, derive_seed(seed, "batch", attempt));
        let cache = forward(cfg, &params, &input, &labels, Mode::Train);
        if kink_distance(&cache) >= opts.kink_margin * opts.step {
            let grads = backward(cfg, &params, &cache, &labels);
            return (params, input, labels, grads);
        }
    }
    panic!("no kink-free instance found");
}

#[test]
fn check_03_gradient_scales_inversely_to_row_scaling() {
    for depth in [2usize, 4] {
        let cfg = arch(true, depth, 8, 20);
        let mut err = f64::INFINITY;
        for attempt in 0..100u64 {
            let params = generic_params(&cfg, derive_seed(SUITE, "scale-params", attempt));
            let (input, labels) =
                random_batch::<f64>(&cfg, 8, derive_seed(SUITE, "scale-batch", attempt));
            let cache = forward(&cfg, &params, &input, &labels, Mode::Train);
            if kink_distance(&cache) < 1e-5 {
                continue;
            }
            let rep =
                random_reparam::<f64>(&cfg, derive_seed(SUITE, "scale-rep", attempt), (0.2, 5.0));
            err = check_gradient_scaling(&cfg, &params, &rep, &input, &labels);
            break;
        }
        assert!(err < 1e-10, "depth {depth}: max rel err {err}");
        println!("PASS gradient inverse-scaling (depth {depth}): max rel err {err:.3e} (< 1e-10)");
    }
}

#[test]
fn check_04_scaled_metric_equivariance() {
    // Algebraic identities on random instances.
    let mut rng = SplitMix64::new(derive_seed(SUITE, "sm-ident", 0));
    let mut worst_left: f64 = 0.0;
    let mut worst_right: f64 = 0.0;
    for _ in 0..20 {
        let w = Matrix::<f64>::gaussian(5, 7, &mut rng);
        let g = Matrix::<f64>::gaussian(5, 7, &mut rng);
        let a: Vec<f64> = (0..5).map(|_| rng.next_range(-1.5, 1.5).exp()).collect();
        let inv_a: Vec<f64> = a.iter().map(|x| 1.0 / x).collect();
        let lr = 0.07;
        let lhs = sm_update_left(&w.scale_rows(&a), &g.scale_rows(&inv_a), lr);
        let rhs = sm_update_left(&w, &g, lr).scale_rows(&a);
        worst_left = worst_left.max(lhs.max_abs_diff(&rhs) / rhs.max_abs().max(1.0));

        let theta = Matrix::<f64>::gaussian(6, 4, &mut rng);
        let gt = Matrix::<f64>::gaussian(6, 4, &mut rng);
        let b: Vec<f64> = (0..4).map(|_| rng.next_range(-1.5, 1.5).exp()).collect();
        let inv_b: Vec<f64> = b.iter().map(|x| 1.0 / x).collect();
        let lhs = sm_update_right(&theta.scale_cols(&inv_b), &gt.scale_cols(&b), lr);
        let rhs = sm_update_right(&theta, &gt, lr).scale_cols(&inv_b);
        worst_right = worst_right.max(lhs.max_abs_diff(&rhs) / rhs.max_abs().max(1.0));
    }
    assert!(worst_left < 1e-12, "left identity {worst_left}");
    assert!(worst_right < 1e-12, "right identity {worst_right}");
    println!(
        "PASS scaled-metric identities: left {worst_left:.3e}, right {worst_right:.3e} (< 1e-12)"
    );

    // Five-step trajectory equivariance, and the Euclidean counterexample.
    let cfg = arch(true, 2, 8, 20);
    let params = init_params::<f64>(&cfg, derive_seed(SUITE, "traj-params", 0));
    let rep = random_reparam::<f64>(&cfg, derive_seed(SUITE, "traj-rep", 0), (0.25, 4.0));
    let mapped = apply_reparam(&cfg, &params, &rep);
    let batches: Vec<_> = (0..5)
        .map(|k| random_batch::<f64>(&cfg, 8, derive_seed(SUITE, "traj-batch", k)))
        .collect();
    let lr = 0.05;

    let sm_base = run_updates(&cfg, params.clone(), UpdateRule::Sm, lr, &batches);
    let sm_mapped = run_updates(&cfg, mapped.clone(), UpdateRule::Sm, lr, &batches);
    let sm_diff = params_rel_diff(&sm_mapped, &apply_reparam(&cfg, &sm_base, &rep));
    assert!(
        sm_diff < 1e-8,
        "scaled-metric trajectory divergence {sm_diff}"
    );
    println!("PASS scaled-metric 5-step trajectory equivariance: rel diff {sm_diff:.3e} (< 1e-8)");

    let eu_base = run_updates(&cfg, params, UpdateRule::Bsgd, lr, &batches);
    let eu_mapped = run_updates(&cfg, mapped, UpdateRule::Bsgd, lr, &batches);
    let eu_diff = params_rel_diff(&eu_mapped, &apply_reparam(&cfg, &eu_base, &rep));
    assert!(
        eu_diff > 1e-3,
        "expected Euclidean divergence, got {eu_diff}"
    );
    println!("PASS Euclidean non-equivariance witness: rel diff {eu_diff:.3e} (> 1e-3)");
}

#[test]
fn check_05_unit_norm_geometry() {
    let mut rng = SplitMix64::new(derive_seed(SUITE, "un", 0));
    let mut w = Matrix::<f64>::gaussian(8, 12, &mut rng).orth_rows();
    for _ in 0..1000 {
        let grad = Matrix::<f64>::gaussian(8, 12, &mut rng);
        w = un_update(&w, &grad, 0.05);
    }
    let mut worst_norm: f64 = 0.0;
    for norm_sq in w.diag_of_gram() {
        worst_norm = worst_norm.max((norm_sq.sqrt() - 1.0).abs());
    }
    assert!(worst_norm < 1e-12, "row norm drift {worst_norm}");

    let z = Matrix::<f64>::gaussian(8, 12, &mut rng);
    let projected = un_project(&w, &z);
    let mut worst_tangency: f64 = 0.0;
    for i in 0..w.rows() {
        let dot: f64 = projected
            .row(i)
            .iter()
            .zip(w.row(i))
            .map(|(&a, &b)| a * b)
            .sum();
        worst_tangency = worst_tangency.max(dot.abs());
    }
    assert!(worst_tangency < 1e-13, "tangency residual {worst_tangency}");
    println!(
        "PASS unit-norm geometry: after 1000 steps max |row norm - 1| {worst_norm:.3e} (< 1e-12), \
         tangency residual {worst_tangency:.3e} (< 1e-13)"
    );
}

fn write_synthetic_idx(dir: &Path) {
    let train: Dataset<f64> = synthetic_dataset(260, 0.03, 500, 0);
    let test: Dataset<f64> = synthetic_dataset(60, 0.03, 500, 1);
    // One file gzipped to exercise that path end to end.
    let images = write_idx_images(&train.inputs);
    let mut enc = flate2_gz(&images);
    std::fs::write(dir.join("train-images-idx3-ubyte.gz"), &mut enc).unwrap();
    std::fs::write(
        dir.join("train-labels-idx1-ubyte"),
        write_idx_labels(&train.labels),
    )
    .unwrap();
    std::fs::write(
        dir.join("t10k-images-idx3-ubyte"),
        write_idx_images(&test.inputs),
    )
    .unwrap();
    std::fs::write(
        dir.join("t10k-labels-idx1-ubyte"),
        write_idx_labels(&test.labels),
    )
    .unwrap();
}

fn flate2_gz(bytes: &[u8]) -> Vec<u8> {
    use std::io::Write;
    let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
    enc.write_all(bytes).unwrap();
    enc.finish().unwrap()
}

#[test]
fn check_06_experiment_determinism() {
    let data_dir = tempfile::tempdir().unwrap();
    write_synthetic_idx(data_dir.path());

    let run = |out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_symsgd"))
            .args([
                "experiment",
                "--data-dir",
                data_dir.path().to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "123",
                "--repeats",
                "2",
                "--depth",
                "2",
                "--filters",
                "16",
                "--batchnorm",
                "--rule",
                "sm",
                "--schedule",
                "bold",
                "--batch-size",
                "16",
                "--min-epochs",
                "2",
                "--max-epochs",
                "3",
                "--train-count",
                "160",
                "--val-count",
                "40",
                "--probe-train",
                "60",
                "--probe-val",
                "30",
                "--probe-epochs",
                "2",
                "--lr-candidates",
                "1e-1,1e-2",
                "--quiet",
            ])
            .status()
            .expect("spawn symsgd");
        assert!(status.success(), "experiment run failed");
    };

    let out1 = tempfile::tempdir().unwrap();
    let out2 = tempfile::tempdir().unwrap();
    run(out1.path());
    run(out2.path());

    let json1 = std::fs::read(out1.path().join("summary.json")).unwrap();
    let json2 = std::fs::read(out2.path().join("summary.json")).unwrap();
    assert_eq!(
        json1, json2,
        "summary JSON bytes differ between identical runs"
    );

    // The summary object carries exactly the pinned keys, in order.
    let text = String::from_utf8(json1.clone()).unwrap();
    let keys = [
        "arch",
        "depth",
        "rule",
        "schedule",
        "mean_test_err",
        "std_test_err",
        "n_runs",
        "n_diverged",
    ];
    let mut last = 0;
    for key in keys {
        let needle = format!("\"{key}\"");
        let pos = text[last..]
            .find(&needle)
            .unwrap_or_else(|| panic!("missing key {key}"));
        last += pos;
    }
    assert_eq!(
        text.matches('"').count(),
        keys.len() * 2 + 6, // 8 quoted keys + 3 quoted string values
        "unexpected extra keys in summary JSON:\n{text}"
    );

    // Trajectories are covered by the same determinism argument; verify too.
    for entry in std::fs::read_dir(out1.path()).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(out1.path().join(&name)).unwrap();
        let b = std::fs::read(out2.path().join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between identical runs");
    }
    println!(
        "PASS experiment determinism: byte-identical summary.json ({} bytes) across two runs",
        json1.len()
    );
}

#[test]
fn check_09_exponential_decay_arithmetic() {
    for base in [1e-2, 1e-3, 1e-4, 1e-5] {
        let mut schedule = LrSchedule::exp_decay(base);
        let mut expected = base;
        for epoch in 1..=60 {
            schedule.exp_decay_step();
            expected *= 0.95;
            let rel = (schedule.current_lr() - expected).abs() / expected;
            assert!(rel < 1e-15, "base {base} epoch {epoch}: rel err {rel}");
        }
    }
    let mut schedule = LrSchedule::exp_decay(1e-3);
    schedule.exp_decay_step();
    schedule.exp_decay_step();
    let rel = (schedule.current_lr() - 9.025e-4).abs() / 9.025e-4;
    assert!(rel < 1e-15, "two-epoch hand value: rel err {rel}");
    println!("PASS exponential-decay arithmetic: base*0.95^e exact over 60 epochs (< 1e-15)");
}

/// Desk-scale reproduction on real MNIST plus the qualitative ordering
/// check. Needs the four IDX files (env `SYMSGD_DATA_DIR` or `./data`) and
/// several CPU-hours; run explicitly with `-- --ignored --nocapture`.
#[test]
#[ignore = "requires MNIST IDX files and hours of compute; see README"]
fn check_07_08_mnist_desk_scale_reproduction_and_ordering() {
    let dir = std::env::var_os("SYMSGD_DATA_DIR")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| "data".into());
    let train = symsgd::data::load_train_set::<f64>(&dir).expect("MNIST training set");
    let test = symsgd::data::load_test_set::<f64>(&dir).expect("MNIST test set");

    let run = |rule: UpdateRule| {
        let arch = ArchConfig::batch_norm(2, 64, 784, 10);
        let mut cfg = ExperimentConfig::standard(arch, rule, ScheduleKind::BoldDriver);
        cfg.repeats = 3;
        cfg.master_seed = 2016;
        cfg.verbose = true;
        run_experiment(&cfg, &train, &test).expect("experiment")
    };

    let sm = run(UpdateRule::Sm);
    println!(
        "batchnorm d2 sm bold: mean {:.4} +- {:.4} ({} runs, {} diverged)",
        sm.summary.mean_test_err, sm.summary.std_test_err, sm.summary.n_runs, sm.summary.n_diverged
    );
    assert!(
        sm.summary.mean_test_err <= 0.030,
        "scaled-metric mean test error {} exceeds 0.030",
        sm.summary.mean_test_err
    );
    println!(
        "PASS desk-scale reproduction (sm, bold): mean {:.4} <= 0.030",
        sm.summary.mean_test_err
    );

    let bsgd = run(UpdateRule::Bsgd);
    println!(
        "batchnorm d2 bsgd bold: mean {:.4} +- {:.4} ({} runs, {} diverged)",
        bsgd.summary.mean_test_err,
        bsgd.summary.std_test_err,
        bsgd.summary.n_runs,
        bsgd.summary.n_diverged
    );
    assert!(
        bsgd.summary.mean_test_err <= 0.035,
        "Euclidean-baseline mean test error {} exceeds 0.035",
        bsgd.summary.mean_test_err
    );
    println!(
        "PASS desk-scale reproduction (bsgd, bold): mean {:.4} <= 0.035",
        bsgd.summary.mean_test_err
    );

    // Qualitative ordering: logged, not asserted (3 repeats is too few to
    // fail on a tie-break).
    let ordered = sm.summary.mean_test_err <= bsgd.summary.mean_test_err;
    println!(
        "INFO qualitative ordering: sm {:.4} {} bsgd {:.4}{}",
        sm.summary.mean_test_err,
        if ordered { "<=" } else { ">" },
        bsgd.summary.mean_test_err,
        if ordered {
            ""
        } else {
            " (deviation reported, not failed)"
        }
    );
}
