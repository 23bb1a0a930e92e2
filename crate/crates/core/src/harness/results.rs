//! Result persistence: a summary table (CSV + JSON) and per-run trajectory
//! CSVs suitable for plotting error bands over epochs.
//!
//! Trajectory files carry exactly the columns
//! `epoch,train_err,val_err,test_err,lr`; the JSON summary carries exactly
//! the keys `arch, depth, rule, schedule, mean_test_err, std_test_err,
//! n_runs, n_diverged` (one object for a single configuration, an array of
//! such objects otherwise). Floats are written in Rust's shortest
//! round-tripping form, so `parse(emit(x)) == x` holds exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::RunResult;

pub const TRAJECTORY_HEADER: &str = "epoch,train_err,val_err,test_err,lr";
pub const SUMMARY_HEADER: &str =
    "arch,depth,rule,schedule,mean_test_err,std_test_err,n_runs,n_diverged";

#[derive(Debug, thiserror::Error)]
pub enum EmitError {
    #[error("result I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed results file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

/// Per-configuration statistics over the non-diverged runs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentSummary {
    pub arch: String,
    pub depth: usize,
    pub rule: String,
    pub schedule: String,
    pub mean_test_err: f64,
    pub std_test_err: f64,
    pub n_runs: usize,
    pub n_diverged: usize,
}

impl ExperimentSummary {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.arch,
            self.depth,
            self.rule,
            self.schedule,
            self.mean_test_err,
            self.std_test_err,
            self.n_runs,
            self.n_diverged
        )
    }

    fn file_stem(&self) -> String {
        format!(
            "{}_d{}_{}_{}",
            self.arch, self.depth, self.rule, self.schedule
        )
    }
}

/// One configuration's summary plus its raw runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub summary: ExperimentSummary,
    pub runs: Vec<RunResult>,
}

/// One row of a trajectory CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub epoch: usize,
    pub train_err: f64,
    pub val_err: f64,
    pub test_err: f64,
    pub lr: f64,
}

/// Files written by [`emit_results`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedPaths {
    pub summary_csv: PathBuf,
    pub summary_json: PathBuf,
    pub trajectories: Vec<PathBuf>,
}

/// Writes `summary.csv` (one row per configuration), `summary.json`, and one
/// trajectory CSV per run named `{arch}_d{depth}_{rule}_{schedule}_run{k}.csv`.
pub fn emit_results(outputs: &[ExperimentOutput], dir: &Path) -> Result<EmittedPaths, EmitError> {
    let wrap = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EmitError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(wrap(dir))?;

    let mut csv = String::from(SUMMARY_HEADER);
    csv.push('\n');
    for out in outputs {
        csv.push_str(&out.summary.csv_row());
        csv.push('\n');
    }
    let summary_csv = dir.join("summary.csv");
    std::fs::write(&summary_csv, csv).map_err(wrap(&summary_csv))?;

    let summaries: Vec<&ExperimentSummary> = outputs.iter().map(|o| &o.summary).collect();
    let mut json = match summaries.as_slice() {
        [single] => serde_json::to_string_pretty(single),
        many => serde_json::to_string_pretty(many),
    }
    .expect("summary serialization cannot fail");
    json.push('\n');
    let summary_json = dir.join("summary.json");
    std::fs::write(&summary_json, json).map_err(wrap(&summary_json))?;

    let mut trajectories = Vec::new();
    for out in outputs {
        for (k, run) in out.runs.iter().enumerate() {
            let mut body = String::from(TRAJECTORY_HEADER);
            body.push('\n');
            for r in &run.epochs {
                writeln!(
                    body,
                    "{},{},{},{},{}",
                    r.epoch, r.train_err, r.val_err, r.test_err, r.lr
                )
                .expect("string write");
            }
            let path = dir.join(format!("{}_run{k:02}.csv", out.summary.file_stem()));
            std::fs::write(&path, body).map_err(wrap(&path))?;
            trajectories.push(path);
        }
    }

    Ok(EmittedPaths {
        summary_csv,
        summary_json,
        trajectories,
    })
}

/// Reads a summary JSON back; accepts both the single-object and the array
/// form.
pub fn parse_summary_json(path: &Path) -> Result<Vec<ExperimentSummary>, EmitError> {
    let text = std::fs::read_to_string(path).map_err(|source| EmitError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |reason: String| EmitError::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    if let Ok(many) = serde_json::from_str::<Vec<ExperimentSummary>>(&text) {
        return Ok(many);
    }
    serde_json::from_str::<ExperimentSummary>(&text)
        .map(|one| vec![one])
        .map_err(|e| malformed(e.to_string()))
}

/// Reads a trajectory CSV back.
pub fn parse_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>, EmitError> {
    let text = std::fs::read_to_string(path).map_err(|source| EmitError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |reason: String| EmitError::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == TRAJECTORY_HEADER => {}
        other => {
            return Err(malformed(format!(
                "bad header {:?}, expected {TRAJECTORY_HEADER:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(malformed(format!("line {}: expected 5 fields", lineno + 2)));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| malformed(format!("line {}: {e}", lineno + 2)))
        };
        rows.push(TrajectoryRow {
            epoch: fields[0]
                .parse::<usize>()
                .map_err(|e| malformed(format!("line {}: {e}", lineno + 2)))?,
            train_err: parse_f(fields[1])?,
            val_err: parse_f(fields[2])?,
            test_err: parse_f(fields[3])?,
            lr: parse_f(fields[4])?,
        });
    }
    Ok(rows)
}
