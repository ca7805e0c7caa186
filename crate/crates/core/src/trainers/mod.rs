//! Trainer abstraction and the built-in trainers.
//!
//! A trainer receives the sampled manifest for one iteration and returns the
//! per-class objective for every training epoch, measured on a validation set
//! it owns and never changes.

use std::time::Duration;

use thiserror::Error;

use crate::optimizer::{EpochWindow, Objective, ObjectiveMatrix};
use crate::sampler::SampledManifest;

mod external;
mod micro;
pub mod protocol;
mod simulator;

pub use external::ExternalTrainer;
pub use micro::{Cluster, MicroDataset, MicroTrainer, SyntheticTask};
pub use simulator::{LearningCurve, LearningCurveParams, SimulatedTrainer};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid learning curve: {0}")]
    InvalidCurve(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("trainer timed out after {0:?}")]
    Timeout(Duration),
    #[error("trainer exited with {}: {diagnostics}", code.map(|c| c.to_string()).unwrap_or_else(|| "no exit code".into()))]
    NonZeroExit { code: Option<i32>, diagnostics: String },
    #[error("malformed trainer response: {0}")]
    MalformedResponse(String),
    #[error("response dimensions do not match the request: {0}")]
    DimensionMismatch(String),
    #[error("class `{class}`: objective at epoch {epoch} is not finite")]
    NonFiniteObjective { class: String, epoch: usize },
    #[error("class `{class}`: objective {value} at epoch {epoch} is outside the valid range")]
    ObjectiveOutOfRange { class: String, epoch: usize, value: f64 },
    #[error("trainer i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// What a trainer is asked to do in one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerRequest {
    pub run_id: String,
    pub iteration: u64,
    pub epochs: usize,
    pub window: EpochWindow,
    pub objective: Objective,
    pub seed: u64,
    pub class_table: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainerMeta {
    pub name: String,
    pub version: String,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerResponse {
    pub matrix: ObjectiveMatrix,
    pub meta: TrainerMeta,
}

pub trait Trainer {
    fn train(&mut self, sample: &SampledManifest, request: &TrainerRequest) -> Result<TrainerResponse, TrainerError>;
}

impl<T: Trainer + ?Sized> Trainer for Box<T> {
    fn train(&mut self, sample: &SampledManifest, request: &TrainerRequest) -> Result<TrainerResponse, TrainerError> {
        (**self).train(sample, request)
    }
}

/// Checks a matrix against the request: one row per class, one column per
/// epoch, values finite and in `[0, 1]`, strictly positive inside the window.
pub fn validate_matrix(rows: Vec<Vec<f64>>, request: &TrainerRequest) -> Result<ObjectiveMatrix, TrainerError> {
    let n = request.class_table.len();
    if rows.len() != n {
        return Err(TrainerError::DimensionMismatch(format!("{} rows for {n} classes", rows.len())));
    }
    for (c, row) in rows.iter().enumerate() {
        let class = || request.class_table[c].clone();
        if row.len() != request.epochs {
            return Err(TrainerError::DimensionMismatch(format!(
                "class `{}` has {} epochs, expected {}",
                class(),
                row.len(),
                request.epochs
            )));
        }
        for (epoch, &value) in row.iter().enumerate() {
            if !value.is_finite() {
                return Err(TrainerError::NonFiniteObjective { class: class(), epoch });
            }
            let in_window = request.window.range().contains(&epoch);
            if !(0.0..=1.0).contains(&value) || (in_window && value <= 0.0) {
                return Err(TrainerError::ObjectiveOutOfRange { class: class(), epoch, value });
            }
        }
    }
    ObjectiveMatrix::new(rows, request.window).map_err(|e| TrainerError::DimensionMismatch(e.to_string()))
}
