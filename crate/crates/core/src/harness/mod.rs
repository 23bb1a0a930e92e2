//! Experiment protocol: learning-rate selection, full training runs with
//! stopping criteria, repeated trials and summary statistics.
//!
//! One repeat = pick a base learning rate by probing candidates on a small
//! seeded subset, then train on a fresh seeded train/validation split of the
//! source set under the configured rule and learning-rate protocol,
//! recording per-epoch metrics on train, validation and test sets.
//!
//! Two error scales coexist deliberately: misclassification fractions (what
//! the trajectory files and summaries report) and mean cross-entropy per
//! sample (what the stopping rules and the bold driver react to, where a
//! 1e-5 threshold is meaningful). Every epoch logs both.
//!
//! All randomness derives from one master seed through tagged streams, so a
//! `(config, master seed)` pair reproduces an experiment bit for bit in
//! single-threaded execution.

mod results;

pub use results::{
    emit_results, parse_summary_json, parse_trajectory_csv, EmitError, EmittedPaths,
    ExperimentOutput, ExperimentSummary, TrajectoryRow, SUMMARY_HEADER, TRAJECTORY_HEADER,
};

use std::time::Instant;

use crate::data::{epoch_batches, DataError, Dataset, SplitSpec};
use crate::network::{backward, evaluate, forward, init_params, ArchConfig, Mode, NetworkParams};
use crate::optim::{apply_rule_in_place, LrSchedule, ScheduleKind, UpdateRule};
use crate::rng::derive_seed;

/// Training stops (bold driver only) once the mean training cross-entropy
/// drops below this.
pub const TRAIN_CONVERGED_XENT: f64 = 1e-5;
/// Training stops (bold driver only) once successive validation
/// cross-entropy measurements differ by less than this.
pub const VAL_PLATEAU_DELTA: f64 = 1e-5;
/// Validation error (misclassification) above this marks a run diverged...
pub const DIVERGED_VAL_ERR: f64 = 0.9;
/// ...but only after this many epochs, to let a run find its footing.
pub const DIVERGENCE_GRACE_EPOCHS: usize = 5;
/// A worsening validation cross-entropy is judged against the measurement
/// this many epochs earlier.
pub const VAL_WORSENED_LOOKBACK: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("every learning-rate candidate diverged")]
    AllCandidatesDiverged,
    #[error("every training run diverged")]
    AllRunsDiverged,
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Full description of one experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub arch: ArchConfig,
    pub rule: UpdateRule,
    pub schedule: ScheduleKind,
    pub lr_candidates: Vec<f64>,
    pub batch_size: usize,
    pub repeats: usize,
    pub master_seed: u64,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub bold_boost: f64,
    pub bold_cut: f64,
    /// Training/validation sizes for the full runs.
    pub train_count: usize,
    pub val_count: usize,
    /// Subset sizes and epoch budget for learning-rate probing.
    pub probe_train: usize,
    pub probe_val: usize,
    pub probe_epochs: usize,
    /// Per-epoch stdout logging.
    pub verbose: bool,
}

impl ExperimentConfig {
    /// The standard protocol: candidates 1e-2..1e-5, mini-batches of 100,
    /// 10 repeats, 25..60 epochs, 50000/10000 split, 1000/500-image probe
    /// subsets trained for 50 epochs.
    pub fn standard(arch: ArchConfig, rule: UpdateRule, schedule: ScheduleKind) -> Self {
        ExperimentConfig {
            arch,
            rule,
            schedule,
            lr_candidates: vec![1e-2, 1e-3, 1e-4, 1e-5],
            batch_size: 100,
            repeats: 10,
            master_seed: 0,
            min_epochs: 25,
            max_epochs: 60,
            bold_boost: 1.05,
            bold_cut: 0.5,
            train_count: 50_000,
            val_count: 10_000,
            probe_train: 1000,
            probe_val: 500,
            probe_epochs: 50,
            verbose: false,
        }
    }

    pub fn validate(&self, source_len: usize) -> Result<(), ExperimentError> {
        let fail = |msg: String| Err(ExperimentError::InvalidConfig(msg));
        if self.lr_candidates.is_empty() {
            return fail("no learning-rate candidates".into());
        }
        if self
            .lr_candidates
            .iter()
            .any(|&lr| !lr.is_finite() || lr <= 0.0)
        {
            return fail("learning-rate candidates must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.repeats == 0 {
            return fail("at least one repeat required".into());
        }
        if self.min_epochs > self.max_epochs {
            return fail(format!(
                "min_epochs {} exceeds max_epochs {}",
                self.min_epochs, self.max_epochs
            ));
        }
        if self.train_count + self.val_count > source_len {
            return fail(format!(
                "split {}+{} exceeds source size {}",
                self.train_count, self.val_count, source_len
            ));
        }
        if self.train_count == 0 || self.val_count == 0 {
            return fail("train and validation splits must be nonempty".into());
        }
        if self.probe_train + self.probe_val > source_len {
            return fail(format!(
                "probe subsets {}+{} exceed source size {}",
                self.probe_train, self.probe_val, source_len
            ));
        }
        if self.probe_train == 0 || self.probe_val == 0 {
            return fail("probe subsets must be nonempty".into());
        }
        Ok(())
    }

    fn summary_shell(&self) -> ExperimentSummary {
        ExperimentSummary {
            arch: if self.arch.use_batchnorm {
                "batchnorm"
            } else {
                "plain"
            }
            .to_string(),
            depth: self.arch.depth,
            rule: self.rule.label().to_string(),
            schedule: self.schedule.label().to_string(),
            mean_test_err: 0.0,
            std_test_err: 0.0,
            n_runs: 0,
            n_diverged: 0,
        }
    }
}

/// Why a training run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Termination {
    #[serde(rename = "max-epochs")]
    MaxEpochs,
    #[serde(rename = "train-converged")]
    TrainConverged,
    #[serde(rename = "val-worsened")]
    ValWorsened,
    #[serde(rename = "val-plateau")]
    ValPlateau,
    #[serde(rename = "diverged")]
    Diverged,
}

impl Termination {
    pub fn label(self) -> &'static str {
        match self {
            Termination::MaxEpochs => "max-epochs",
            Termination::TrainConverged => "train-converged",
            Termination::ValWorsened => "val-worsened",
            Termination::ValPlateau => "val-plateau",
            Termination::Diverged => "diverged",
        }
    }
}

/// End-of-epoch measurements. The `*_err` fields are misclassification
/// fractions; the `*_xent` fields mean cross-entropy per sample.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_err: f64,
    pub val_err: f64,
    pub test_err: f64,
    pub lr: f64,
    pub train_xent: f64,
    pub val_xent: f64,
}

/// One full training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunResult {
    pub selected_lr: f64,
    pub epochs: Vec<EpochRecord>,
    /// Test misclassification at the final epoch; `None` when the run
    /// diverged before completing a single epoch.
    pub final_test_err: Option<f64>,
    pub termination: Termination,
    pub wall_time_s: f64,
}

impl RunResult {
    pub fn diverged(&self) -> bool {
        self.termination == Termination::Diverged
    }
}

/// Outcome of probing one learning-rate candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateOutcome {
    pub lr: f64,
    /// Mean validation cross-entropy after probe training; infinite when
    /// the candidate diverged.
    pub val_xent: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrSelection {
    pub selected_lr: f64,
    pub outcomes: Vec<CandidateOutcome>,
}

/// Picks the base learning rate: trains a fresh network per candidate at
/// that constant rate on a seeded probe subset, scores each on a disjoint
/// seeded validation subset, and returns the candidate with the lowest
/// validation cross-entropy. Ties break toward the smaller rate.
pub fn select_learning_rate(
    cfg: &ExperimentConfig,
    source: &Dataset<f64>,
    seed: u64,
) -> Result<LrSelection, ExperimentError> {
    cfg.validate(source.len())?;
    let spec = SplitSpec {
        train_count: cfg.probe_train,
        val_count: cfg.probe_val,
        seed: derive_seed(seed, "probe-split", 0),
    };
    let (probe_train, probe_val) = source.split(&spec)?;
    let init_seed = derive_seed(seed, "probe-init", 0);

    let mut candidates = cfg.lr_candidates.clone();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut outcomes = Vec::with_capacity(candidates.len());
    for &lr in &candidates {
        let mut params: NetworkParams<f64> = init_params(&cfg.arch, init_seed);
        let mut diverged = false;
        'train: for epoch in 1..=cfg.probe_epochs {
            // Same batch order for every candidate: only the rate varies.
            let batches = epoch_batches(
                probe_train.len(),
                cfg.batch_size,
                derive_seed(seed, "probe-epoch", epoch as u64),
            );
            for batch in &batches {
                let (input, labels) = probe_train.gather(batch);
                let cache = forward(&cfg.arch, &params, &input, &labels, Mode::Train);
                if !cache.loss.is_finite() {
                    diverged = true;
                    break 'train;
                }
                let grads = backward(&cfg.arch, &params, &cache, &labels);
                apply_rule_in_place(&mut params, &grads, cfg.rule, lr);
                params.update_bn_running(&cfg.arch, &cache);
            }
        }
        let val_xent = if diverged {
            f64::INFINITY
        } else {
            let m = evaluate(&cfg.arch, &params, &probe_val, Mode::Eval);
            if m.mean_xent.is_finite() {
                m.mean_xent
            } else {
                f64::INFINITY
            }
        };
        let diverged = !val_xent.is_finite();
        if cfg.verbose {
            println!("lr-select: candidate {lr:>9.0e} val_xent {val_xent:.6} diverged {diverged}");
        }
        outcomes.push(CandidateOutcome {
            lr,
            val_xent,
            diverged,
        });
    }

    // Ascending candidate order + strict improvement = smallest rate wins ties.
    let mut best: Option<&CandidateOutcome> = None;
    for outcome in outcomes.iter().filter(|o| !o.diverged) {
        if best.is_none_or(|b| outcome.val_xent < b.val_xent) {
            best = Some(outcome);
        }
    }
    let best = best.ok_or(ExperimentError::AllCandidatesDiverged)?;
    Ok(LrSelection {
        selected_lr: best.lr,
        outcomes,
    })
}

/// The stopping rules, applied to the metric history after each epoch.
/// Fires only for the bold-driver protocol and never before `min_epochs`
/// epochs have completed. In order: training converged, validation worse
/// than `VAL_WORSENED_LOOKBACK` epochs earlier, validation plateau.
pub fn stopping_decision(
    schedule: ScheduleKind,
    train_xents: &[f64],
    val_xents: &[f64],
    min_epochs: usize,
) -> Option<Termination> {
    if schedule != ScheduleKind::BoldDriver {
        return None;
    }
    let e = train_xents.len();
    debug_assert_eq!(val_xents.len(), e);
    if e < min_epochs || e == 0 {
        return None;
    }
    if train_xents[e - 1] < TRAIN_CONVERGED_XENT {
        return Some(Termination::TrainConverged);
    }
    if e > VAL_WORSENED_LOOKBACK && val_xents[e - 1] > val_xents[e - 1 - VAL_WORSENED_LOOKBACK] {
        return Some(Termination::ValWorsened);
    }
    if e >= 2 && (val_xents[e - 1] - val_xents[e - 2]).abs() < VAL_PLATEAU_DELTA {
        return Some(Termination::ValPlateau);
    }
    None
}

/// Trains one network with the selected base rate. Exponential-decay runs
/// go the full `max_epochs`; bold-driver runs additionally obey the
/// stopping rules after `min_epochs`. Divergence (non-finite loss, or
/// validation misclassification above `DIVERGED_VAL_ERR` after the grace
/// period) ends the run as a recorded outcome, not an error.
pub fn run_training(
    cfg: &ExperimentConfig,
    source: &Dataset<f64>,
    test: &Dataset<f64>,
    selected_lr: f64,
    seed: u64,
) -> RunResult {
    run_training_full(cfg, source, test, selected_lr, seed).0
}

/// [`run_training`] variant that also hands back the trained parameters,
/// for checkpointing.
pub fn run_training_full(
    cfg: &ExperimentConfig,
    source: &Dataset<f64>,
    test: &Dataset<f64>,
    selected_lr: f64,
    seed: u64,
) -> (RunResult, NetworkParams<f64>) {
    assert!(selected_lr >= 0.0, "negative learning rate");
    let started = Instant::now();
    let spec = SplitSpec {
        train_count: cfg.train_count,
        val_count: cfg.val_count,
        seed: derive_seed(seed, "split", 0),
    };
    let (train, val) = source.split(&spec).expect("validated split");
    let mut params: NetworkParams<f64> = init_params(&cfg.arch, derive_seed(seed, "init", 0));
    let mut schedule = if selected_lr > 0.0 {
        Some(LrSchedule::new(
            cfg.schedule,
            selected_lr,
            cfg.bold_boost,
            cfg.bold_cut,
        ))
    } else {
        None // frozen dynamics: lr stays exactly zero
    };

    let mut records: Vec<EpochRecord> = Vec::new();
    let mut termination = None;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let lr = schedule.as_ref().map_or(0.0, LrSchedule::current_lr);
        let batches = epoch_batches(
            train.len(),
            cfg.batch_size,
            derive_seed(seed, "epoch", epoch as u64),
        );
        for batch in &batches {
            let (input, labels) = train.gather(batch);
            let cache = forward(&cfg.arch, &params, &input, &labels, Mode::Train);
            if !cache.loss.is_finite() {
                termination = Some(Termination::Diverged);
                break 'epochs;
            }
            let grads = backward(&cfg.arch, &params, &cache, &labels);
            apply_rule_in_place(&mut params, &grads, cfg.rule, lr);
            params.update_bn_running(&cfg.arch, &cache);
        }

        let train_m = evaluate(&cfg.arch, &params, &train, Mode::Eval);
        let val_m = evaluate(&cfg.arch, &params, &val, Mode::Eval);
        let test_m = evaluate(&cfg.arch, &params, test, Mode::Eval);
        records.push(EpochRecord {
            epoch,
            train_err: train_m.error_rate,
            val_err: val_m.error_rate,
            test_err: test_m.error_rate,
            lr,
            train_xent: train_m.mean_xent,
            val_xent: val_m.mean_xent,
        });
        if cfg.verbose {
            println!(
                "epoch {epoch:>3} lr {lr:.3e} train_err {:.4} train_xent {:.6} \
                 val_err {:.4} val_xent {:.6} test_err {:.4}",
                train_m.error_rate,
                train_m.mean_xent,
                val_m.error_rate,
                val_m.mean_xent,
                test_m.error_rate
            );
        }

        let finite = [train_m.mean_xent, val_m.mean_xent]
            .iter()
            .all(|x| x.is_finite());
        if !finite || (epoch > DIVERGENCE_GRACE_EPOCHS && val_m.error_rate > DIVERGED_VAL_ERR) {
            termination = Some(Termination::Diverged);
            break;
        }

        let train_xents: Vec<f64> = records.iter().map(|r| r.train_xent).collect();
        let val_xents: Vec<f64> = records.iter().map(|r| r.val_xent).collect();
        if let Some(reason) =
            stopping_decision(cfg.schedule, &train_xents, &val_xents, cfg.min_epochs)
        {
            termination = Some(reason);
            break;
        }

        if let Some(s) = schedule.as_mut() {
            match cfg.schedule {
                ScheduleKind::ExpDecay => s.exp_decay_step(),
                ScheduleKind::BoldDriver => {
                    if records.len() >= 2 {
                        let prev = records[records.len() - 2].val_xent;
                        let curr = records[records.len() - 1].val_xent;
                        s.bold_driver_step(prev, curr);
                    }
                }
            }
        }
    }

    let result = RunResult {
        selected_lr,
        final_test_err: records.last().map(|r| r.test_err),
        epochs: records,
        termination: termination.unwrap_or(Termination::MaxEpochs),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    (result, params)
}

/// The full protocol: per repeat, derive fresh seeds, select a learning rate
/// and train on the full source split; then summarize final test errors over
/// the non-diverged runs.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    source: &Dataset<f64>,
    test: &Dataset<f64>,
) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate(source.len())?;
    let mut runs = Vec::with_capacity(cfg.repeats);
    for repeat in 0..cfg.repeats {
        let repeat_seed = derive_seed(cfg.master_seed, "repeat", repeat as u64);
        let selection = select_learning_rate(cfg, source, derive_seed(repeat_seed, "select", 0))?;
        if cfg.verbose {
            println!("repeat {repeat}: selected lr {}", selection.selected_lr);
        }
        let run = run_training(
            cfg,
            source,
            test,
            selection.selected_lr,
            derive_seed(repeat_seed, "train", 0),
        );
        if cfg.verbose {
            println!(
                "repeat {repeat}: {} after {} epochs, final test err {:?}",
                run.termination.label(),
                run.epochs.len(),
                run.final_test_err
            );
        }
        runs.push(run);
    }

    let finals: Vec<f64> = runs
        .iter()
        .filter(|r| !r.diverged())
        .filter_map(|r| r.final_test_err)
        .collect();
    if finals.is_empty() {
        return Err(ExperimentError::AllRunsDiverged);
    }
    let n = finals.len();
    let mean = finals.iter().sum::<f64>() / n as f64;
    let std = if n >= 2 {
        (finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };

    let mut summary = cfg.summary_shell();
    summary.mean_test_err = mean;
    summary.std_test_err = std;
    summary.n_runs = n;
    summary.n_diverged = runs.len() - n;
    Ok(ExperimentOutput { summary, runs })
}
