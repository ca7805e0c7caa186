//! The optimization loop: quota, sample, train, update, record.
//!
//! Each iteration is checkpointed before the next one starts, so an
//! interrupted or aborted run resumes exactly where it stopped. Sampling and
//! trainer seeds derive from `(seed, iteration)` only, which makes a resumed
//! run indistinguishable from an uninterrupted one.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Prepared, RunConfig, SetupError};
use crate::optimizer::{convergence_check, max_relative_change, normalized, optimize_step, Limits, OptimizerError};
use crate::sampler::{mix_seed, sample_subset, QuotaVector, SampleError, TRAINER_STREAM};
use crate::trainers::{Trainer, TrainerError, TrainerRequest};

mod expand;
pub mod store;

pub use expand::{expand_distribution, ExpandError, Expansion};
pub use store::RunStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Converged,
    Saturated,
    Aborted,
}

impl RunStatus {
    /// CLI exit code for a run that ended in this state.
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Completed | RunStatus::Converged => 0,
            RunStatus::Saturated => 2,
            RunStatus::Aborted => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum AbortCause {
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error("run aborted at iteration {iteration}: {cause}")]
    Aborted { iteration: u64, cause: AbortCause, history: Box<RunHistory> },
    #[error("manifest changed since the run started (recorded {recorded}, found {found})")]
    ManifestDrift { recorded: String, found: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("{0} already holds a run; resume it or choose another directory")]
    ExistingRun(PathBuf),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Setup(_) | RunError::ExistingRun(_) | RunError::ManifestDrift { .. } => 64,
            RunError::Aborted { .. } => RunStatus::Aborted.exit_code(),
            RunError::CorruptCheckpoint(_) | RunError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    /// Raw factors this iteration trained with.
    pub factors: Vec<f64>,
    /// `factors / sum(factors)`.
    pub normalized_factors: Vec<f64>,
    pub quotas: Vec<u64>,
    pub class_means: Vec<f64>,
    pub targets: Vec<f64>,
    /// Offset-free cross-class average.
    pub mean_objective: f64,
    pub variance: f64,
    pub adjusted_variance: f64,
    /// Updated factors before clamping.
    pub raw_next_factors: Vec<f64>,
    /// Updated factors after clamping.
    pub next_factors: Vec<f64>,
    pub at_lower: Vec<bool>,
    pub at_upper: Vec<bool>,
    pub saturated: bool,
    pub max_relative_change: f64,
    /// Kept out of the history document; see `timings.csv`.
    #[serde(skip)]
    pub trainer_wall_seconds: f64,
}

/// Data-limited fallback reported on saturation: every class uses all of its `D_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fallback {
    pub factors: Vec<f64>,
    pub quotas: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub config: RunConfig,
    pub manifest_hash: String,
    pub classes: Vec<String>,
    pub records: Vec<IterationRecord>,
    /// `None` while the run is in progress.
    pub status: Option<RunStatus>,
    pub abort_reason: Option<String>,
    pub fallback: Option<Fallback>,
}

impl RunHistory {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Latest factor estimate; a saturated run reports its last pre-saturation factors.
    pub fn final_factors(&self) -> Option<&[f64]> {
        let last = self.records.last()?;
        if last.saturated {
            Some(&last.factors)
        } else {
            Some(&last.next_factors)
        }
    }

    /// Quotas of the last trained iteration.
    pub fn final_quotas(&self) -> Option<&[u64]> {
        self.records.last().map(|r| r.quotas.as_slice())
    }

    pub fn to_json(&self) -> Vec<u8> {
        crate::trainers::protocol::to_json(self)
    }
}

/// Builds the trainer from the configuration and runs into `config.out_dir`.
pub fn run(config: &RunConfig) -> Result<RunHistory, RunError> {
    let dir = out_dir(config)?;
    let prepared = config.prepare(&dir)?;
    start(config, prepared, &dir)
}

/// Like [`run`], with a caller-supplied trainer.
pub fn run_with_trainer(config: &RunConfig, trainer: Box<dyn Trainer>) -> Result<RunHistory, RunError> {
    let dir = out_dir(config)?;
    let mut prepared = config.prepare(&dir)?;
    prepared.trainer = trainer;
    start(config, prepared, &dir)
}

/// Continues the run stored in `dir`. Finished runs are returned unchanged.
pub fn resume(dir: &Path) -> Result<RunHistory, RunError> {
    resume_inner(dir, None)
}

pub fn resume_with_trainer(dir: &Path, trainer: Box<dyn Trainer>) -> Result<RunHistory, RunError> {
    resume_inner(dir, Some(trainer))
}

pub fn load_history(dir: &Path) -> Result<RunHistory, RunError> {
    RunStore::open(dir).load()
}

fn out_dir(config: &RunConfig) -> Result<PathBuf, RunError> {
    config.out_dir.clone().ok_or_else(|| SetupError::Invalid("no output directory configured".into()).into())
}

fn start(config: &RunConfig, mut prepared: Prepared, dir: &Path) -> Result<RunHistory, RunError> {
    let store = RunStore::open(dir);
    if store.exists() {
        return Err(RunError::ExistingRun(dir.to_path_buf()));
    }
    store.init(&prepared.manifest.to_csv())?;
    let mut history = RunHistory {
        config: config.clone(),
        manifest_hash: prepared.manifest.content_hash(),
        classes: prepared.manifest.classes().to_vec(),
        records: Vec::new(),
        status: None,
        abort_reason: None,
        fallback: None,
    };
    store.sync(&history)?;
    drive(&mut history, &mut prepared, &store)?;
    Ok(history)
}

fn resume_inner(dir: &Path, trainer: Option<Box<dyn Trainer>>) -> Result<RunHistory, RunError> {
    let store = RunStore::open(dir);
    let mut history = store.load()?;
    if matches!(history.status, Some(s) if s != RunStatus::Aborted) {
        return Ok(history);
    }
    let mut prepared = history.config.prepare(dir)?;
    let found = prepared.manifest.content_hash();
    if found != history.manifest_hash {
        return Err(RunError::ManifestDrift { recorded: history.manifest_hash.clone(), found });
    }
    if let Some(t) = trainer {
        prepared.trainer = t;
    }
    history.status = None;
    history.abort_reason = None;
    drive(&mut history, &mut prepared, &store)?;
    Ok(history)
}

/// Terminal status implied by the records alone.
fn settle(history: &RunHistory, offsets: &[f64]) -> Option<RunStatus> {
    let last = history.records.last()?;
    if last.saturated {
        return Some(RunStatus::Saturated);
    }
    let patience = history.config.tolerances.patience;
    let tail = &history.records[history.records.len().saturating_sub(patience)..];
    let mut trajectory: Vec<Vec<f64>> = tail.iter().map(|r| r.factors.clone()).collect();
    trajectory.push(last.next_factors.clone());
    let adjusted: Vec<Vec<f64>> =
        tail.iter().map(|r| r.class_means.iter().zip(offsets).map(|(m, o)| m - o).collect()).collect();
    if convergence_check(&trajectory, &adjusted, &history.config.tolerances) {
        return Some(RunStatus::Converged);
    }
    (history.records.len() >= history.config.iterations).then_some(RunStatus::Completed)
}

fn drive(history: &mut RunHistory, prepared: &mut Prepared, store: &RunStore) -> Result<(), RunError> {
    let specs = &prepared.specs;
    let max_samples = specs.max_samples();
    let offsets = specs.offsets();
    let (lower, upper) = (specs.lower(), specs.upper());
    let limits = Limits { offsets: &offsets, lower: &lower, upper: &upper };
    let seed = history.config.seed;

    let mut status = settle(history, &offsets);
    let mut factors = history.last().map(|r| r.next_factors.clone()).unwrap_or_else(|| specs.factors());

    while status.is_none() {
        let iteration = history.records.len() as u64;
        let quotas = QuotaVector::from_factors(iteration, &max_samples, &factors);
        let request = TrainerRequest {
            run_id: history.config.run_id.clone(),
            iteration,
            epochs: history.config.epochs,
            window: prepared.window,
            objective: prepared.objective,
            seed: mix_seed(seed, iteration, TRAINER_STREAM),
            class_table: history.classes.clone(),
        };
        let attempt = sample_subset(&prepared.manifest, &quotas, seed)
            .map_err(AbortCause::from)
            .and_then(|sample| prepared.trainer.train(&sample, &request).map_err(AbortCause::from))
            .and_then(|response| {
                optimize_step(&response.matrix, &factors, limits)
                    .map(|step| (response.meta.wall_time_seconds, step))
                    .map_err(AbortCause::from)
            });
        let (wall, step) = match attempt {
            Ok(ok) => ok,
            Err(cause) => {
                log::error!("iteration {iteration}: {cause}");
                history.status = Some(RunStatus::Aborted);
                history.abort_reason = Some(cause.to_string());
                store.sync(history)?;
                return Err(RunError::Aborted { iteration, cause, history: Box::new(history.clone()) });
            }
        };

        let d = step.diagnostics;
        let record = IterationRecord {
            iteration,
            normalized_factors: normalized(&factors),
            quotas: quotas.quotas,
            max_relative_change: max_relative_change(&factors, &step.state.factors),
            factors,
            class_means: d.class_means,
            targets: d.targets,
            mean_objective: d.mean_objective,
            variance: d.variance,
            adjusted_variance: d.adjusted_variance,
            raw_next_factors: d.raw_factors,
            next_factors: step.state.factors.clone(),
            at_lower: step.state.at_lower,
            at_upper: step.state.at_upper,
            saturated: step.state.saturated,
            trainer_wall_seconds: wall,
        };
        log::info!(
            "iteration {iteration}: mean {:.4} variance {:.3e} max change {:.4}",
            record.mean_objective,
            record.variance,
            record.max_relative_change
        );
        store.write_record(&record)?;
        history.records.push(record);
        status = settle(history, &offsets);
        factors = step.state.factors;
        if status.is_none() {
            store.sync(history)?;
        }
    }

    if status == Some(RunStatus::Saturated) {
        log::warn!("saturated: a class hit its lower limit while another hit its upper limit");
        history.fallback = Some(Fallback { factors: vec![1.0; max_samples.len()], quotas: max_samples.clone() });
    }
    history.status = status;
    store.sync(history)?;
    Ok(())
}
