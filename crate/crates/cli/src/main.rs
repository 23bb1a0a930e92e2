//! Command-line driver: train single networks, run full repeated
//! experiments, and verify gradients and weight-space symmetries.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use symsgd::data::{load_test_set, load_train_set, Dataset};
use symsgd::harness::{
    emit_results, run_experiment, run_training_full, select_learning_rate, ExperimentConfig,
    ExperimentOutput, ExperimentSummary,
};
use symsgd::network::{
    forward, gradcheck, init_params, kink_distance, random_batch, save_params, ArchConfig,
    GradcheckOptions, Mode,
};
use symsgd::optim::{ScheduleKind, UpdateRule};
use symsgd::rng::derive_seed;
use symsgd::symmetry::{check_gradient_scaling, check_loss_invariance, random_reparam};

/// Environment variable consulted when `--data-dir` is not given.
const DATA_DIR_ENV: &str = "SYMSGD_DATA_DIR";

#[derive(Parser)]
#[command(
    name = "symsgd",
    about = "Symmetry-invariant SGD for fully connected deep networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network (one learning-rate selection + one full run).
    Train(TrainArgs),
    /// Run the full protocol: repeated selection + training, with summary
    /// statistics over the non-diverged runs.
    Experiment(ExperimentArgs),
    /// Compare back-propagation against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Verify loss invariance under random weight-space reparameterizations.
    SymmetryCheck(SymmetryArgs),
}

#[derive(Args)]
struct ArchArgs {
    /// Number of hidden layers.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// Insert a batch-normalization step in every layer.
    #[arg(long)]
    batchnorm: bool,
    /// Filters per layer (must be even).
    #[arg(long, default_value_t = 64)]
    filters: usize,
    /// Batch-normalization epsilon.
    #[arg(long, default_value_t = 1e-5)]
    bn_epsilon: f64,
}

impl ArchArgs {
    fn config(&self, input_dim: usize, n_classes: usize) -> ArchConfig {
        let mut cfg = if self.batchnorm {
            ArchConfig::batch_norm(self.depth, self.filters, input_dim, n_classes)
        } else {
            ArchConfig::plain(self.depth, self.filters, input_dim, n_classes)
        };
        cfg.bn_epsilon = self.bn_epsilon;
        cfg
    }
}

#[derive(Args)]
struct ProtocolArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// Directory with the MNIST IDX files (falls back to $SYMSGD_DATA_DIR,
    /// then ./data). Accepts raw or .gz files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Weight-update rule: bsgd, sm or un.
    #[arg(long, default_value = "sm", value_parser = clap::value_parser!(UpdateRule))]
    rule: UpdateRule,
    /// Learning-rate protocol: exp or bold.
    #[arg(long, default_value = "bold", value_parser = clap::value_parser!(ScheduleKind))]
    schedule: ScheduleKind,
    /// Base-rate candidates for the selection phase.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-2, 1e-3, 1e-4, 1e-5])]
    lr_candidates: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 25)]
    min_epochs: usize,
    #[arg(long, default_value_t = 60)]
    max_epochs: usize,
    /// Bold-driver multiplier after a validation improvement.
    #[arg(long, default_value_t = 1.05)]
    boost: f64,
    /// Bold-driver multiplier after a validation worsening.
    #[arg(long, default_value_t = 0.5)]
    cut: f64,
    /// Master seed; everything derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for summary and trajectory files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Training-split size for full runs.
    #[arg(long, default_value_t = 50_000)]
    train_count: usize,
    /// Validation-split size for full runs.
    #[arg(long, default_value_t = 10_000)]
    val_count: usize,
    /// Training-subset size for learning-rate probing.
    #[arg(long, default_value_t = 1000)]
    probe_train: usize,
    /// Validation-subset size for learning-rate probing.
    #[arg(long, default_value_t = 500)]
    probe_val: usize,
    /// Epochs per probe run.
    #[arg(long, default_value_t = 50)]
    probe_epochs: usize,
    /// Suppress per-epoch logging.
    #[arg(long)]
    quiet: bool,
}

impl ProtocolArgs {
    fn experiment_config(&self, repeats: usize) -> ExperimentConfig {
        let arch = self
            .arch
            .config(symsgd::data::INPUT_DIM, symsgd::data::N_CLASSES);
        let mut cfg = ExperimentConfig::standard(arch, self.rule, self.schedule);
        cfg.lr_candidates = self.lr_candidates.clone();
        cfg.batch_size = self.batch_size;
        cfg.repeats = repeats;
        cfg.master_seed = self.seed;
        cfg.min_epochs = self.min_epochs;
        cfg.max_epochs = self.max_epochs;
        cfg.bold_boost = self.boost;
        cfg.bold_cut = self.cut;
        cfg.train_count = self.train_count;
        cfg.val_count = self.val_count;
        cfg.probe_train = self.probe_train;
        cfg.probe_val = self.probe_val;
        cfg.probe_epochs = self.probe_epochs;
        cfg.verbose = !self.quiet;
        cfg
    }

    fn load_data(&self) -> Result<(Dataset<f64>, Dataset<f64>)> {
        let dir = self
            .data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"));
        let train = load_train_set(&dir)
            .with_context(|| format!("loading training set from {}", dir.display()))?;
        let test = load_test_set(&dir)
            .with_context(|| format!("loading test set from {}", dir.display()))?;
        Ok((train, test))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Fixed base rate; skips the selection phase.
    #[arg(long)]
    lr: Option<f64>,
    /// Write the trained parameters to this checkpoint file.
    #[arg(long)]
    save_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Independent repeats of selection + training.
    #[arg(long, default_value_t = 10)]
    repeats: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long, default_value_t = 12)]
    input_dim: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Coordinates sampled per parameter tensor.
    #[arg(long, default_value_t = 50)]
    coords: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum acceptable relative error.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Args)]
struct SymmetryArgs {
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 8)]
    filters: usize,
    #[arg(long, default_value_t = 20)]
    input_dim: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Random (params, reparameterization, batch) triples per architecture.
    #[arg(long, default_value_t = 100)]
    triples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum acceptable loss / probability discrepancy.
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::SymmetryCheck(args) => cmd_symmetry_check(args),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.protocol.experiment_config(1);
    let (train, test) = args.protocol.load_data()?;
    cfg.validate(train.len())?;

    let repeat_seed = derive_seed(cfg.master_seed, "repeat", 0);
    let lr = match args.lr {
        Some(lr) => {
            if lr <= 0.0 {
                bail!("--lr must be positive");
            }
            lr
        }
        None => {
            let selection =
                select_learning_rate(&cfg, &train, derive_seed(repeat_seed, "select", 0))?;
            println!("selected base learning rate: {}", selection.selected_lr);
            selection.selected_lr
        }
    };
    let (run, params) = run_training_full(
        &cfg,
        &train,
        &test,
        lr,
        derive_seed(repeat_seed, "train", 0),
    );
    println!(
        "terminated: {} after {} epochs; final test error {}",
        run.termination.label(),
        run.epochs.len(),
        run.final_test_err
            .map_or("n/a".to_string(), |e| format!("{e:.4}")),
    );

    if let Some(path) = &args.save_checkpoint {
        save_params(&params, path).with_context(|| format!("saving {}", path.display()))?;
        println!("checkpoint written to {}", path.display());
    }
    if run.diverged() {
        bail!("training run diverged; no results emitted");
    }

    let output = ExperimentOutput {
        summary: ExperimentSummary {
            arch: if cfg.arch.use_batchnorm {
                "batchnorm"
            } else {
                "plain"
            }
            .to_string(),
            depth: cfg.arch.depth,
            rule: cfg.rule.label().to_string(),
            schedule: cfg.schedule.label().to_string(),
            mean_test_err: run
                .final_test_err
                .expect("non-diverged run has a final error"),
            std_test_err: 0.0,
            n_runs: 1,
            n_diverged: 0,
        },
        runs: vec![run],
    };
    let paths = emit_results(std::slice::from_ref(&output), &args.protocol.out)?;
    println!(
        "results in {}",
        paths.summary_json.parent().unwrap().display()
    );
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let cfg = args.protocol.experiment_config(args.repeats);
    let (train, test) = args.protocol.load_data()?;
    let output = run_experiment(&cfg, &train, &test)?;
    println!(
        "{} d{} {} {}: mean test err {:.4} +- {:.4} over {} runs ({} diverged)",
        output.summary.arch,
        output.summary.depth,
        output.summary.rule,
        output.summary.schedule,
        output.summary.mean_test_err,
        output.summary.std_test_err,
        output.summary.n_runs,
        output.summary.n_diverged
    );
    let paths = emit_results(std::slice::from_ref(&output), &args.protocol.out)?;
    println!(
        "results in {}",
        paths.summary_json.parent().unwrap().display()
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let cfg = args.arch.config(args.input_dim, symsgd::data::N_CLASSES);
    let opts = GradcheckOptions {
        step: args.step,
        coords_per_tensor: args.coords,
        ..GradcheckOptions::default()
    };
    let report = gradcheck::<f64>(&cfg, args.batch_size, args.seed, &opts);
    for tensor in &report.per_tensor {
        println!(
            "{:>14}: max rel err {:.3e} over {} coords",
            tensor.name, tensor.max_rel_err, tensor.coords_checked
        );
    }
    println!(
        "overall max rel err {:.3e} (tolerance {:.1e}, {} resamples)",
        report.max_rel_err, args.tolerance, report.resamples
    );
    if report.max_rel_err >= args.tolerance {
        bail!("gradient check failed");
    }
    println!("gradient check passed");
    Ok(())
}

fn cmd_symmetry_check(args: SymmetryArgs) -> Result<()> {
    let mut failures = 0;
    for batchnorm in [false, true] {
        let mut cfg = if batchnorm {
            ArchConfig::batch_norm(
                args.depth,
                args.filters,
                args.input_dim,
                symsgd::data::N_CLASSES,
            )
        } else {
            ArchConfig::plain(
                args.depth,
                args.filters,
                args.input_dim,
                symsgd::data::N_CLASSES,
            )
        };
        // Exact normalization: positive epsilon breaks exact invariance.
        cfg.bn_epsilon = 0.0;
        let label = if batchnorm { "batchnorm" } else { "plain" };

        let mut worst_loss: f64 = 0.0;
        let mut worst_prob: f64 = 0.0;
        for k in 0..args.triples {
            let params = init_params::<f64>(&cfg, derive_seed(args.seed, "params", k as u64));
            let rep =
                random_reparam::<f64>(&cfg, derive_seed(args.seed, "rep", k as u64), (0.1, 10.0));
            let (input, labels) = random_batch::<f64>(
                &cfg,
                args.batch_size,
                derive_seed(args.seed, "batch", k as u64),
            );
            let report = check_loss_invariance(&cfg, &params, &rep, &input, &labels, Mode::Train);
            worst_loss = worst_loss.max(report.loss_diff);
            worst_prob = worst_prob.max(report.max_prob_diff);
        }
        let ok = worst_loss < args.tolerance && worst_prob < args.tolerance;
        println!(
            "{label:>9}: max |dL| {worst_loss:.3e}, max |dp| {worst_prob:.3e} over {} triples -> {}",
            args.triples,
            if ok { "ok" } else { "VIOLATED" }
        );
        if !ok {
            failures += 1;
        }

        if batchnorm {
            // Per-row inverse gradient scaling, at a kink-free point.
            let mut err = f64::INFINITY;
            for attempt in 0..100 {
                let params =
                    init_params::<f64>(&cfg, derive_seed(args.seed, "scaling-params", attempt));
                let (input, labels) = random_batch::<f64>(
                    &cfg,
                    args.batch_size,
                    derive_seed(args.seed, "scaling-batch", attempt),
                );
                let cache = forward(&cfg, &params, &input, &labels, Mode::Train);
                if kink_distance(&cache) < 1e-5 {
                    continue;
                }
                let rep = random_reparam::<f64>(
                    &cfg,
                    derive_seed(args.seed, "scaling-rep", attempt),
                    (0.2, 5.0),
                );
                err = check_gradient_scaling(&cfg, &params, &rep, &input, &labels);
                break;
            }
            let ok = err < args.tolerance;
            println!(
                "{label:>9}: gradient inverse-scaling max rel err {err:.3e} -> {}",
                if ok { "ok" } else { "VIOLATED" }
            );
            if !ok {
                failures += 1;
            }
        }
    }
    if failures > 0 {
        bail!("{failures} symmetry check(s) violated");
    }
    println!("symmetry checks passed");
    Ok(())
}
