//! Run summaries, plot tables and the brute-force allocation oracle.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::{mean, normalized, population_variance};
use crate::orchestrator::{RunHistory, RunStatus};
use crate::trainers::LearningCurve;

pub const FACTORS_FILE: &str = "factors.csv";
pub const OBJECTIVES_FILE: &str = "objectives.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("history has no iterations")]
    EmptyHistory,
    #[error("budget {budget} cannot give each of {n} classes a sample")]
    BudgetTooSmall { budget: u64, n: usize },
    #[error("grid step {0} must divide 1")]
    InvalidStep(f64),
    #[error("the oracle enumerates 2 or 3 classes, got {0}")]
    UnsupportedClassCount(usize),
    #[error("bad table: {0}")]
    Table(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub classes: Vec<String>,
    pub status: Option<RunStatus>,
    /// Offset-free cross-class average per iteration.
    pub mean_series: Vec<f64>,
    /// `[iteration][class]` window means.
    pub class_mean_series: Vec<Vec<f64>>,
    /// `[iteration][class]` normalized factors.
    pub factor_series: Vec<Vec<f64>>,
    pub final_factors: Vec<f64>,
    pub final_normalized: Vec<f64>,
    pub final_quotas: Vec<u64>,
    /// Arithmetic mean of the last iteration's class means.
    pub final_mean: f64,
    /// Population variance of the last iteration's class means.
    pub final_variance: f64,
    /// Samples used in the last iteration.
    pub total_samples: u64,
}

pub fn summarize(history: &RunHistory) -> Result<RunSummary, ReportError> {
    let last = history.last().ok_or(ReportError::EmptyHistory)?;
    let final_factors = history.final_factors().ok_or(ReportError::EmptyHistory)?.to_vec();
    Ok(RunSummary {
        classes: history.classes.clone(),
        status: history.status,
        mean_series: history.records.iter().map(|r| r.mean_objective).collect(),
        class_mean_series: history.records.iter().map(|r| r.class_means.clone()).collect(),
        factor_series: history.records.iter().map(|r| r.normalized_factors.clone()).collect(),
        final_normalized: normalized(&final_factors),
        final_factors,
        final_quotas: last.quotas.clone(),
        final_mean: mean(&last.class_means),
        final_variance: population_variance(&last.class_means),
        total_samples: last.quotas.iter().sum(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorRow {
    pub iteration: u64,
    pub class: String,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveRow {
    pub iteration: u64,
    pub class: String,
    pub class_mean: f64,
    pub mean_objective: f64,
}

pub fn factor_rows(summary: &RunSummary) -> Vec<FactorRow> {
    summary
        .factor_series
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter().zip(&summary.classes).map(move |(&factor, class)| FactorRow {
                iteration: i as u64,
                class: class.clone(),
                factor,
            })
        })
        .collect()
}

pub fn objective_rows(summary: &RunSummary) -> Vec<ObjectiveRow> {
    summary
        .class_mean_series
        .iter()
        .zip(&summary.mean_series)
        .enumerate()
        .flat_map(|(i, (row, &avg))| {
            row.iter().zip(&summary.classes).map(move |(&m, class)| ObjectiveRow {
                iteration: i as u64,
                class: class.clone(),
                class_mean: m,
                mean_objective: avg,
            })
        })
        .collect()
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("flush Vec")
}

pub fn write_factor_table(rows: &[FactorRow]) -> Vec<u8> {
    let mut w = writer();
    w.write_record(["iteration", "class", "factor_normalized"]).expect("write to Vec");
    for r in rows {
        w.write_record([r.iteration.to_string(), r.class.clone(), r.factor.to_string()]).expect("write to Vec");
    }
    finish(w)
}

pub fn write_objective_table(rows: &[ObjectiveRow]) -> Vec<u8> {
    let mut w = writer();
    w.write_record(["iteration", "class", "class_mean", "mean_objective"]).expect("write to Vec");
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.class.clone(),
            r.class_mean.to_string(),
            r.mean_objective.to_string(),
        ])
        .expect("write to Vec");
    }
    finish(w)
}

/// Per-class final state plus an `all` row with the cross-class mean and variance.
pub fn write_summary_table(summary: &RunSummary) -> Vec<u8> {
    let mut w = writer();
    w.write_record(["scope", "raw_factor", "normalized_factor", "quota", "objective_mean", "objective_variance"])
        .expect("write to Vec");
    let last_means = summary.class_mean_series.last().cloned().unwrap_or_default();
    for (c, class) in summary.classes.iter().enumerate() {
        w.write_record([
            class.clone(),
            summary.final_factors[c].to_string(),
            summary.final_normalized[c].to_string(),
            summary.final_quotas[c].to_string(),
            last_means.get(c).map(f64::to_string).unwrap_or_default(),
            String::new(),
        ])
        .expect("write to Vec");
    }
    w.write_record([
        "all".to_string(),
        summary.final_factors.iter().sum::<f64>().to_string(),
        summary.final_normalized.iter().sum::<f64>().to_string(),
        summary.total_samples.to_string(),
        summary.final_mean.to_string(),
        summary.final_variance.to_string(),
    ])
    .expect("write to Vec");
    finish(w)
}

fn records(bytes: &[u8], header: &[&str]) -> Result<Vec<csv::StringRecord>, ReportError> {
    let mut r = csv::ReaderBuilder::new().from_reader(bytes);
    let h = r.headers().map_err(|e| ReportError::Table(e.to_string()))?;
    if h.iter().ne(header.iter().copied()) {
        return Err(ReportError::Table(format!("unexpected header {h:?}")));
    }
    r.records().collect::<Result<Vec<_>, _>>().map_err(|e| ReportError::Table(e.to_string()))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, ReportError> {
    rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| ReportError::Table(format!("bad field {i} in {rec:?}")))
}

pub fn read_factor_table(bytes: &[u8]) -> Result<Vec<FactorRow>, ReportError> {
    records(bytes, &["iteration", "class", "factor_normalized"])?
        .iter()
        .map(|r| Ok(FactorRow { iteration: field(r, 0)?, class: field(r, 1)?, factor: field(r, 2)? }))
        .collect()
}

pub fn read_objective_table(bytes: &[u8]) -> Result<Vec<ObjectiveRow>, ReportError> {
    records(bytes, &["iteration", "class", "class_mean", "mean_objective"])?
        .iter()
        .map(|r| {
            Ok(ObjectiveRow {
                iteration: field(r, 0)?,
                class: field(r, 1)?,
                class_mean: field(r, 2)?,
                mean_objective: field(r, 3)?,
            })
        })
        .collect()
}

/// Writes `factors.csv`, `objectives.csv` and `summary.csv` into `dir`.
pub fn emit_plot_data(summary: &RunSummary, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(FACTORS_FILE), write_factor_table(&factor_rows(summary)))?;
    fs::write(dir.join(OBJECTIVES_FILE), write_objective_table(&objective_rows(summary)))?;
    fs::write(dir.join(SUMMARY_FILE), write_summary_table(summary))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub step: f64,
    pub budget: u64,
    pub evaluated: usize,
    /// Grid units per class (each unit is `step * budget` samples).
    pub best_units: Vec<usize>,
    pub best_allocation: Vec<f64>,
    pub best_variance: f64,
    pub bicdo_allocation: Option<Vec<u64>>,
    pub bicdo_variance: Option<f64>,
}

impl OracleResult {
    /// Attaches a heuristic allocation and its plateau variance under the same curves.
    pub fn with_bicdo(mut self, curves: &[LearningCurve], quotas: &[u64]) -> Self {
        let d: Vec<f64> = quotas.iter().map(|&q| q as f64).collect();
        self.bicdo_variance = Some(plateau_variance(curves, &d));
        self.bicdo_allocation = Some(quotas.to_vec());
        self
    }

    /// Largest per-class gap between the heuristic and the optimum, as a fraction of the heuristic's total.
    pub fn max_share_gap(&self) -> Option<f64> {
        let q = self.bicdo_allocation.as_ref()?;
        let total: u64 = q.iter().sum();
        let units: usize = self.best_units.iter().sum();
        Some(
            q.iter()
                .zip(&self.best_units)
                .map(|(&d, &u)| (d as f64 / total as f64 - u as f64 / units as f64).abs())
                .fold(0.0, f64::max),
        )
    }
}

pub fn plateau_variance(curves: &[LearningCurve], quotas: &[f64]) -> f64 {
    let p: Vec<f64> = curves.iter().zip(quotas).map(|(c, &d)| c.plateau(d)).collect();
    population_variance(&p)
}

/// Exhaustive search over budget splits on a `step` grid (every class gets at
/// least one step) for the split with the smallest plateau variance. Ties go to
/// the lexicographically smallest split.
pub fn grid_oracle(curves: &[LearningCurve], budget: u64, step: f64) -> Result<OracleResult, ReportError> {
    let n = curves.len();
    if !(2..=3).contains(&n) {
        return Err(ReportError::UnsupportedClassCount(n));
    }
    if budget < n as u64 {
        return Err(ReportError::BudgetTooSmall { budget, n });
    }
    let units = (1.0 / step).round();
    if !(step > 0.0 && step <= 1.0) || (units * step - 1.0).abs() > 1e-9 {
        return Err(ReportError::InvalidStep(step));
    }
    let units = units as usize;
    if units < n {
        return Err(ReportError::InvalidStep(step));
    }
    let to_samples = |k: &[usize]| -> Vec<f64> { k.iter().map(|&u| budget as f64 * u as f64 / units as f64).collect() };

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut evaluated = 0;
    let mut consider = |k: Vec<usize>| {
        evaluated += 1;
        let v = plateau_variance(curves, &to_samples(&k));
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, k));
        }
    };
    // lexicographic enumeration
    if n == 2 {
        for a in 1..units {
            consider(vec![a, units - a]);
        }
    } else {
        for a in 1..units - 1 {
            for b in 1..units - a {
                consider(vec![a, b, units - a - b]);
            }
        }
    }
    let (best_variance, best_units) = best.expect("grid is non-empty");
    Ok(OracleResult {
        step,
        budget,
        evaluated,
        best_allocation: to_samples(&best_units),
        best_units,
        best_variance,
        bicdo_allocation: None,
        bicdo_variance: None,
    })
}
