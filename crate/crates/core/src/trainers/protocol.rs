//! File exchange with external trainers.
//!
//! A request bundle is a directory holding:
//!
//! * `manifest.csv` - the sampled training table (`locator,label`),
//! * `manifest.meta.json` - sampling metadata (seed, iteration, classes, quotas),
//! * `request.json` - a flat object with `manifest`, `run_id`, `iteration`, `epochs`,
//!   `window_start`, `window_end`, `objective`, `seed` and `class_table`.
//!
//! The trainer answers with `response.json` in the same directory:
//! `classes` (names, request order), `epochs`, `values` (row-major, one row per
//! class) and `trainer` (`name`, `version`, `wall_time_seconds`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_matrix, TrainerError, TrainerMeta, TrainerRequest, TrainerResponse};
use crate::optimizer::{EpochWindow, Objective};
use crate::sampler::SampledManifest;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_META_FILE: &str = "manifest.meta.json";
pub const REQUEST_FILE: &str = "request.json";
pub const RESPONSE_FILE: &str = "response.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestDocument {
    pub manifest: String,
    pub run_id: String,
    pub iteration: u64,
    pub epochs: usize,
    pub window_start: usize,
    pub window_end: usize,
    pub objective: String,
    pub seed: u64,
    pub class_table: Vec<String>,
}

impl RequestDocument {
    pub fn from_request(request: &TrainerRequest) -> Self {
        Self {
            manifest: MANIFEST_FILE.to_string(),
            run_id: request.run_id.clone(),
            iteration: request.iteration,
            epochs: request.epochs,
            window_start: request.window.start,
            window_end: request.window.end,
            objective: request.objective.to_string(),
            seed: request.seed,
            class_table: request.class_table.clone(),
        }
    }

    pub fn to_request(&self) -> Result<TrainerRequest, TrainerError> {
        let objective: Objective = self
            .objective
            .parse()
            .map_err(|e: crate::optimizer::UnsupportedObjective| TrainerError::MalformedResponse(e.to_string()))?;
        let window = EpochWindow::new(self.window_start, self.window_end, self.epochs)
            .map_err(|e| TrainerError::MalformedResponse(e.to_string()))?;
        Ok(TrainerRequest {
            run_id: self.run_id.clone(),
            iteration: self.iteration,
            epochs: self.epochs,
            window,
            objective,
            seed: self.seed,
            class_table: self.class_table.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseDocument {
    pub classes: Vec<String>,
    pub epochs: usize,
    pub values: Vec<f64>,
    pub trainer: TrainerMeta,
}

impl ResponseDocument {
    pub fn from_rows(classes: Vec<String>, rows: &[Vec<f64>], trainer: TrainerMeta) -> Self {
        let epochs = rows.first().map(Vec::len).unwrap_or(0);
        Self { classes, epochs, values: rows.iter().flatten().copied().collect(), trainer }
    }
}

/// Writes the manifest, its metadata and the request document into `dir`.
pub fn write_bundle(dir: &Path, sample: &SampledManifest, request: &TrainerRequest) -> Result<(), TrainerError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST_FILE), sample.to_csv())?;
    fs::write(dir.join(MANIFEST_META_FILE), to_json(&sample.meta()))?;
    fs::write(dir.join(REQUEST_FILE), to_json(&RequestDocument::from_request(request)))?;
    Ok(())
}

pub fn read_request(dir: &Path) -> Result<RequestDocument, TrainerError> {
    let bytes = fs::read(dir.join(REQUEST_FILE))?;
    serde_json::from_slice(&bytes).map_err(|e| TrainerError::MalformedResponse(format!("request: {e}")))
}

/// Parses and validates a response against the request that produced it.
pub fn parse_response(bytes: &[u8], request: &TrainerRequest) -> Result<TrainerResponse, TrainerError> {
    let doc: ResponseDocument =
        serde_json::from_slice(bytes).map_err(|e| TrainerError::MalformedResponse(e.to_string()))?;
    if doc.classes != request.class_table {
        return Err(TrainerError::DimensionMismatch(format!(
            "response classes {:?} differ from request {:?}",
            doc.classes, request.class_table
        )));
    }
    if doc.epochs != request.epochs {
        return Err(TrainerError::DimensionMismatch(format!(
            "response has {} epochs, request asked for {}",
            doc.epochs, request.epochs
        )));
    }
    let n = doc.classes.len();
    if doc.values.len() != n * doc.epochs {
        return Err(TrainerError::DimensionMismatch(format!(
            "{} values for {n} classes x {} epochs",
            doc.values.len(),
            doc.epochs
        )));
    }
    if doc.epochs == 0 {
        return Err(TrainerError::DimensionMismatch("zero epochs".into()));
    }
    let rows: Vec<Vec<f64>> = doc.values.chunks(doc.epochs).map(<[f64]>::to_vec).collect();
    let matrix = validate_matrix(rows, request)?;
    Ok(TrainerResponse { matrix, meta: doc.trainer })
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable document");
    out.push(b'\n');
    out
}
