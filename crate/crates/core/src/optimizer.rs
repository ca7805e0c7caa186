//! Factor update rule.
//!
//! One step turns a trainer's per-class, per-epoch objective matrix into new
//! distribution factors:
//!
//! 1. subtract each class's target offset on the epoch window,
//! 2. average the adjusted values across classes per epoch,
//! 3. average that over the window and add the offset back (class target `T_c`),
//! 4. average each class's raw values over the window (class mean `mu_c`),
//! 5. scale each factor by `T_c / mu_c` and clamp it into `[l_c, u_c]`.
//!
//! All window means divide by the inclusive epoch count.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Targets are floored here when a large negative offset drives them non-positive.
pub const TARGET_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("class {class}: objective {value} at epoch {epoch} is not positive")]
    NonPositiveObjective { class: usize, epoch: usize, value: f64 },
    #[error("class {class}: objective at epoch {epoch} is not finite")]
    NonFiniteObjective { class: usize, epoch: usize },
    #[error("class {class}: cannot divide by class mean {mean}")]
    DivisionDomain { class: usize, mean: f64 },
    #[error("epoch window {start}..={end} is invalid for {epochs} epochs")]
    InvalidWindow { start: usize, end: usize, epochs: usize },
    #[error("matrix row {row} has {got} epochs, expected {expected}")]
    RaggedMatrix { row: usize, expected: usize, got: usize },
    #[error("expected {expected} classes, got {got}")]
    ClassCountMismatch { expected: usize, got: usize },
}

/// Per-class objectives the optimizer accepts. Composite scores such as F1
/// couple classes and are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Accuracy,
    Precision,
    Recall,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Accuracy => "accuracy",
            Objective::Precision => "precision",
            Objective::Recall => "recall",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("objective `{0}` is not supported (allowed: accuracy, precision, recall)")]
pub struct UnsupportedObjective(pub String);

impl FromStr for Objective {
    type Err = UnsupportedObjective;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "accuracy" => Ok(Objective::Accuracy),
            "precision" => Ok(Objective::Precision),
            "recall" => Ok(Objective::Recall),
            _ => Err(UnsupportedObjective(s.to_string())),
        }
    }
}

/// Inclusive epoch range `start..=end` over which objectives are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochWindow {
    pub start: usize,
    pub end: usize,
}

impl EpochWindow {
    pub fn new(start: usize, end: usize, epochs: usize) -> Result<Self, OptimizerError> {
        if start > end || end >= epochs {
            return Err(OptimizerError::InvalidWindow { start, end, epochs });
        }
        Ok(Self { start, end })
    }

    /// Last 20% of training: `start = ceil(0.8 * epochs)`, `end = epochs - 1`.
    pub fn trailing(epochs: usize) -> Self {
        assert!(epochs > 0, "need at least one epoch");
        let start = (epochs * 4).div_ceil(5).min(epochs - 1);
        Self { start, end: epochs - 1 }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn range(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// Per-class, per-epoch objective values as returned by a trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveMatrix {
    values: Vec<Vec<f64>>,
    window: EpochWindow,
}

impl ObjectiveMatrix {
    pub fn new(values: Vec<Vec<f64>>, window: EpochWindow) -> Result<Self, OptimizerError> {
        let epochs = values.first().map(Vec::len).unwrap_or(0);
        for (row, r) in values.iter().enumerate() {
            if r.len() != epochs {
                return Err(OptimizerError::RaggedMatrix { row, expected: epochs, got: r.len() });
            }
            if let Some(epoch) = r.iter().position(|v| !v.is_finite()) {
                return Err(OptimizerError::NonFiniteObjective { class: row, epoch });
            }
        }
        if window.start > window.end || window.end >= epochs {
            return Err(OptimizerError::InvalidWindow { start: window.start, end: window.end, epochs });
        }
        Ok(Self { values, window })
    }

    pub fn n_classes(&self) -> usize {
        self.values.len()
    }

    pub fn epochs(&self) -> usize {
        self.values.first().map(Vec::len).unwrap_or(0)
    }

    pub fn window(&self) -> EpochWindow {
        self.window
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.values[class]
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.values
    }
}

/// `obj_c[i] - o_c` for every window epoch; one row per class, one column per window epoch.
pub fn offset_adjusted(matrix: &ObjectiveMatrix, offsets: &[f64]) -> Vec<Vec<f64>> {
    let w = matrix.window();
    matrix.rows().iter().zip(offsets).map(|(row, &o)| row[w.range()].iter().map(|v| v - o).collect()).collect()
}

/// Cross-class mean for each window epoch.
pub fn epoch_average(adjusted: &[Vec<f64>]) -> Vec<f64> {
    let width = adjusted.first().map(Vec::len).unwrap_or(0);
    (0..width).map(|i| mean(&adjusted.iter().map(|row| row[i]).collect::<Vec<_>>())).collect()
}

/// Window mean of the epoch averages plus the class's own offset.
pub fn class_target(avg: &[f64], offset: f64) -> f64 {
    mean(avg) + offset
}

/// Window mean of one class's raw objective row.
pub fn class_mean(row: &[f64], window: EpochWindow) -> Result<f64, OptimizerError> {
    for i in window.range() {
        if row[i] <= 0.0 {
            return Err(OptimizerError::NonPositiveObjective { class: 0, epoch: i, value: row[i] });
        }
    }
    Ok(mean(&row[window.range()]))
}

/// `f_new_c = (T_c / mu_c) * f_c`, before clamping.
pub fn update_factors(factors: &[f64], targets: &[f64], means: &[f64]) -> Result<Vec<f64>, OptimizerError> {
    factors
        .iter()
        .zip(targets)
        .zip(means)
        .enumerate()
        .map(
            |(class, ((&f, &t), &mu))| {
                if mu > 0.0 {
                    Ok(t / mu * f)
                } else {
                    Err(OptimizerError::DivisionDomain { class, mean: mu })
                }
            },
        )
        .collect()
}

/// Clamped factors plus limit flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorState {
    pub factors: Vec<f64>,
    pub at_lower: Vec<bool>,
    pub at_upper: Vec<bool>,
    /// Some class sits at its lower limit while another sits at its upper limit.
    pub saturated: bool,
}

pub fn clamp_and_flag(raw: &[f64], lower: &[f64], upper: &[f64]) -> FactorState {
    let factors: Vec<f64> = raw.iter().zip(lower).zip(upper).map(|((&f, &l), &u)| f.max(l).min(u)).collect();
    let at_lower: Vec<bool> = factors.iter().zip(lower).map(|(f, l)| f <= l).collect();
    let at_upper: Vec<bool> = factors.iter().zip(upper).map(|(f, u)| f >= u).collect();
    // two distinct classes; a class pinned at l == u counts for one side only
    let n = factors.len();
    let saturated = (0..n).any(|a| at_lower[a] && (0..n).any(|b| b != a && at_upper[b]));
    FactorState { factors, at_lower, at_upper, saturated }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    /// `mu_c`: raw window mean per class.
    pub class_means: Vec<f64>,
    /// `T_c`: per-class target.
    pub targets: Vec<f64>,
    /// Offset-free cross-class average (the target of a class with zero offset).
    pub mean_objective: f64,
    pub raw_factors: Vec<f64>,
    /// Population variance of `mu_c` across classes.
    pub variance: f64,
    /// Population variance of `mu_c - o_c`; zero when every class meets its target.
    pub adjusted_variance: f64,
    /// Classes whose target was raised to [`TARGET_FLOOR`].
    pub floored_targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: FactorState,
    pub diagnostics: UpdateDiagnostics,
}

/// Class-side inputs of one update.
#[derive(Debug, Clone, Copy)]
pub struct Limits<'a> {
    pub offsets: &'a [f64],
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

/// Full update: offsets, epoch averages, targets, class means, factor scaling, clamping.
pub fn optimize_step(
    matrix: &ObjectiveMatrix,
    factors: &[f64],
    limits: Limits<'_>,
) -> Result<StepOutcome, OptimizerError> {
    let n = factors.len();
    if matrix.n_classes() != n {
        return Err(OptimizerError::ClassCountMismatch { expected: n, got: matrix.n_classes() });
    }
    let window = matrix.window();
    let class_means = matrix
        .rows()
        .iter()
        .enumerate()
        .map(|(class, row)| {
            class_mean(row, window).map_err(|e| match e {
                OptimizerError::NonPositiveObjective { epoch, value, .. } => {
                    OptimizerError::NonPositiveObjective { class, epoch, value }
                }
                other => other,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let avg = epoch_average(&offset_adjusted(matrix, limits.offsets));
    let mean_objective = class_target(&avg, 0.0);
    let mut floored_targets = Vec::new();
    let targets: Vec<f64> = limits
        .offsets
        .iter()
        .enumerate()
        .map(|(class, &o)| {
            let t = class_target(&avg, o);
            if t <= 0.0 {
                log::warn!("class {class}: target {t} is not positive, using {TARGET_FLOOR}");
                floored_targets.push(class);
                TARGET_FLOOR
            } else {
                t
            }
        })
        .collect();

    let raw_factors = update_factors(factors, &targets, &class_means)?;
    let state = clamp_and_flag(&raw_factors, limits.lower, limits.upper);
    let adjusted: Vec<f64> = class_means.iter().zip(limits.offsets).map(|(m, o)| m - o).collect();
    let diagnostics = UpdateDiagnostics {
        variance: population_variance(&class_means),
        adjusted_variance: population_variance(&adjusted),
        class_means,
        targets,
        mean_objective,
        raw_factors,
        floored_targets,
    };
    Ok(StepOutcome { state, diagnostics })
}

/// Early-stop thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Maximum relative factor change `|f_new - f| / f` over all classes.
    pub factor: f64,
    /// Maximum cross-class variance of offset-adjusted class means.
    pub variance: f64,
    /// Consecutive iterations both conditions must hold.
    pub patience: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { factor: 0.01, variance: 1e-4, patience: 5 }
    }
}

pub fn max_relative_change(before: &[f64], after: &[f64]) -> f64 {
    before.iter().zip(after).map(|(b, a)| (a - b).abs() / b).fold(0.0, f64::max)
}

/// `trajectory[i]` holds the factors trained in iteration `i`, the final entry the
/// factors after the last update; `adjusted_means[i]` holds `mu_c - o_c` of iteration `i`.
pub fn convergence_check(trajectory: &[Vec<f64>], adjusted_means: &[Vec<f64>], tol: &Tolerances) -> bool {
    let steps = adjusted_means.len();
    if tol.patience == 0 || steps < tol.patience || trajectory.len() != steps + 1 {
        return false;
    }
    (steps - tol.patience..steps).all(|i| {
        max_relative_change(&trajectory[i], &trajectory[i + 1]) <= tol.factor
            && population_variance(&adjusted_means[i]) <= tol.variance
    })
}

/// Shifted by the first element, so a constant input returns that constant exactly.
pub fn mean(xs: &[f64]) -> f64 {
    let Some(&first) = xs.first() else { return f64::NAN };
    first + xs.iter().map(|x| x - first).sum::<f64>() / xs.len() as f64
}

pub fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// `f_c / sum(f)`.
pub fn normalized(factors: &[f64]) -> Vec<f64> {
    let total: f64 = factors.iter().sum();
    factors.iter().map(|f| f / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn matrix(rows: Vec<Vec<f64>>, start: usize, end: usize) -> ObjectiveMatrix {
        let epochs = rows[0].len();
        ObjectiveMatrix::new(rows, EpochWindow::new(start, end, epochs).unwrap()).unwrap()
    }

    #[test]
    fn offset_examples() {
        let m = matrix(vec![vec![0.1, 0.6, 0.6], vec![0.2, 0.6, 0.6]], 1, 2);
        assert_eq!(offset_adjusted(&m, &[0.0, 0.0]), vec![vec![0.6, 0.6], vec![0.6, 0.6]]);
        let adj = offset_adjusted(&m, &[0.10, -0.05]);
        assert_relative_eq!(adj[0][0], 0.50, epsilon = 1e-15);
        assert_relative_eq!(adj[1][0], 0.65, epsilon = 1e-15);
        // epochs outside the window are not part of the result
        assert_eq!(adj[0].len(), 2);
    }

    #[test]
    fn epoch_average_examples() {
        assert_eq!(epoch_average(&[vec![0.4], vec![0.6]]), vec![0.5]);
        assert_eq!(epoch_average(&[vec![0.3, 0.3], vec![0.3, 0.3], vec![0.3, 0.3]]), vec![0.3, 0.3]);
    }

    #[test]
    fn epoch_average_against_independent_sum() {
        let rows = vec![vec![0.11, 0.23, 0.37, 0.41], vec![0.52, 0.61, 0.73, 0.89], vec![0.97, 0.05, 0.18, 0.26]];
        let got = epoch_average(&rows);
        for i in 0..4 {
            let mut s = 0.0;
            for row in &rows {
                s += row[i];
            }
            assert_relative_eq!(got[i], s / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn class_target_examples() {
        assert_relative_eq!(class_target(&[0.55, 0.55, 0.55], 0.0), 0.55, epsilon = 1e-15);
        assert_relative_eq!(class_target(&[0.55, 0.55], 0.10), 0.65, epsilon = 1e-15);
        assert_relative_eq!(class_target(&[0.50, 0.60], -0.05), 0.50, epsilon = 1e-15);
    }

    #[test]
    fn class_mean_examples() {
        let w = EpochWindow::new(0, 1, 2).unwrap();
        assert_relative_eq!(class_mean(&[0.7, 0.7], w).unwrap(), 0.7, epsilon = 1e-15);
        assert_relative_eq!(class_mean(&[0.6, 0.8], w).unwrap(), 0.7, epsilon = 1e-15);
        assert!(matches!(class_mean(&[0.6, 0.0], w), Err(OptimizerError::NonPositiveObjective { epoch: 1, .. })));
        // outside the window a zero is irrelevant
        let w = EpochWindow::new(1, 1, 2).unwrap();
        assert_eq!(class_mean(&[0.0, 0.4], w).unwrap(), 0.4);
    }

    #[test]
    fn update_examples() {
        assert_relative_eq!(update_factors(&[0.20], &[0.60], &[0.50]).unwrap()[0], 0.24, epsilon = 1e-15);
        assert_eq!(update_factors(&[0.3], &[0.55], &[0.55]).unwrap(), vec![0.3]);
        assert_relative_eq!(update_factors(&[0.24], &[0.50], &[0.60]).unwrap()[0], 0.20, epsilon = 1e-15);
        assert!(matches!(update_factors(&[0.3], &[0.5], &[0.0]), Err(OptimizerError::DivisionDomain { class: 0, .. })));
    }

    #[test]
    fn clamp_examples() {
        let s = clamp_and_flag(&[1.2], &[0.05], &[0.95]);
        assert_eq!(s.factors, vec![0.95]);
        assert!(s.at_upper[0] && !s.at_lower[0] && !s.saturated);

        let s = clamp_and_flag(&[0.01], &[0.05], &[0.95]);
        assert_eq!(s.factors, vec![0.05]);
        assert!(s.at_lower[0] && !s.saturated);

        let s = clamp_and_flag(&[0.05, 0.95, 0.5], &[0.05; 3], &[0.95; 3]);
        assert!(s.at_lower[0] && s.at_upper[1] && s.saturated);

        // one class pinned with l == u is not saturation on its own
        let s = clamp_and_flag(&[0.5, 0.6], &[0.5, 0.1], &[0.5, 0.9]);
        assert!(s.at_lower[0] && s.at_upper[0] && !s.saturated);
    }

    #[test]
    fn trailing_window() {
        assert_eq!(EpochWindow::trailing(20), EpochWindow { start: 16, end: 19 });
        assert_eq!(EpochWindow::trailing(30), EpochWindow { start: 24, end: 29 });
        assert_eq!(EpochWindow::trailing(1), EpochWindow { start: 0, end: 0 });
        assert_eq!(EpochWindow::trailing(3), EpochWindow { start: 2, end: 2 });
        assert!(EpochWindow::new(3, 2, 10).is_err());
        assert!(EpochWindow::new(3, 10, 10).is_err());
    }

    #[test]
    fn matrix_validation() {
        let w = EpochWindow { start: 0, end: 1 };
        assert!(matches!(
            ObjectiveMatrix::new(vec![vec![0.5, f64::NAN], vec![0.5, 0.5]], w),
            Err(OptimizerError::NonFiniteObjective { class: 0, epoch: 1 })
        ));
        assert!(matches!(
            ObjectiveMatrix::new(vec![vec![0.5, 0.5], vec![0.5]], w),
            Err(OptimizerError::RaggedMatrix { row: 1, .. })
        ));
        assert!(matches!(
            ObjectiveMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]], EpochWindow { start: 0, end: 2 }),
            Err(OptimizerError::InvalidWindow { .. })
        ));
    }

    #[test]
    fn objective_allow_list() {
        assert_eq!("Accuracy".parse::<Objective>().unwrap(), Objective::Accuracy);
        assert_eq!("recall".parse::<Objective>().unwrap(), Objective::Recall);
        assert!("f1".parse::<Objective>().is_err());
        assert!("pr_curve".parse::<Objective>().is_err());
    }

    #[test]
    fn non_positive_target_is_floored() {
        let m = matrix(vec![vec![0.1, 0.1], vec![0.1, 0.1]], 0, 1);
        let limits = Limits { offsets: &[-0.9, 0.9], lower: &[0.05; 2], upper: &[0.95; 2] };
        let out = optimize_step(&m, &[0.5, 0.5], limits).unwrap();
        // avg of adjusted = 0.1 - 0 = 0.1, class 0 target = 0.1 - 0.9 < 0
        assert_eq!(out.diagnostics.floored_targets, vec![0]);
        assert_eq!(out.diagnostics.targets[0], TARGET_FLOOR);
        assert!(out.state.at_lower[0]);
    }

    #[test]
    fn step_reports_class_of_bad_value() {
        let m = matrix(vec![vec![0.5, 0.5], vec![0.5, -0.1]], 0, 1);
        let limits = Limits { offsets: &[0.0; 2], lower: &[0.05; 2], upper: &[0.95; 2] };
        assert!(matches!(
            optimize_step(&m, &[0.5, 0.5], limits),
            Err(OptimizerError::NonPositiveObjective { class: 1, epoch: 1, .. })
        ));
    }

    #[test]
    fn convergence_examples() {
        let tol = Tolerances { factor: 0.01, variance: 1e-4, patience: 3 };
        let steady = vec![vec![0.3, 0.6]; 4];
        let means = vec![vec![0.80, 0.8001]; 3];
        assert!(convergence_check(&steady, &means, &tol));
        // not enough history yet
        assert!(!convergence_check(&steady[..3], &means[..2], &tol));

        let oscillating: Vec<Vec<f64>> =
            (0..4).map(|i| if i % 2 == 0 { vec![0.3, 0.6] } else { vec![0.4, 0.5] }).collect();
        assert!(!convergence_check(&oscillating, &means, &tol));

        let spread = vec![vec![0.6, 0.9]; 3];
        assert!(!convergence_check(&steady, &spread, &tol));
    }

    fn random_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, usize, usize)> {
        (2usize..6, 1usize..8).prop_flat_map(|(n, epochs)| {
            (
                proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, epochs), n),
                proptest::collection::vec(-1.0f64..=1.0, n),
                0..epochs,
                0..epochs,
            )
                .prop_map(|(rows, offs, a, b)| (rows, offs, a.min(b), a.max(b)))
        })
    }

    proptest! {
        #[test]
        fn scale_equivariance((rows, _offs, s, e) in random_case(), k in 0.1f64..10.0) {
            let n = rows.len();
            let zeros = vec![0.0; n];
            let limits = Limits { offsets: &zeros, lower: &vec![1e-9; n], upper: &vec![1.0; n] };
            let f = vec![0.5; n];
            let a = optimize_step(&matrix(rows.clone(), s, e), &f, limits).unwrap();
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
            let b = optimize_step(&matrix(scaled, s, e), &f, limits).unwrap();
            for c in 0..n {
                prop_assert!((a.diagnostics.raw_factors[c] - b.diagnostics.raw_factors[c]).abs() < 1e-12);
            }
        }

        #[test]
        fn fixed_point_and_mean_side((rows, _offs, s, e) in random_case()) {
            let n = rows.len();
            let zeros = vec![0.0; n];
            let limits = Limits { offsets: &zeros, lower: &vec![1e-9; n], upper: &vec![1.0; n] };
            let m = matrix(rows, s, e);
            let out = optimize_step(&m, &vec![0.5; n], limits).unwrap();
            let d = &out.diagnostics;
            for c in 0..n {
                // target is the shared mean when offsets vanish
                prop_assert!((d.targets[c] - d.mean_objective).abs() < 1e-12);
                let grows = d.raw_factors[c] > 0.5;
                let below = d.class_means[c] < d.mean_objective;
                if (d.class_means[c] - d.mean_objective).abs() > 1e-12 {
                    prop_assert_eq!(grows, below);
                }
            }
            let ident = update_factors(&[0.2, 0.7], &d.class_means[..2], &d.class_means[..2]).unwrap();
            prop_assert_eq!(ident, vec![0.2, 0.7]);
        }

        #[test]
        fn clamp_idempotent(raw in proptest::collection::vec(0.0f64..2.0, 2..6), l in 0.01f64..0.5, u in 0.5f64..1.0) {
            let n = raw.len();
            let lo = vec![l; n];
            let hi = vec![u; n];
            let once = clamp_and_flag(&raw, &lo, &hi);
            let twice = clamp_and_flag(&once.factors, &lo, &hi);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.factors.iter().all(|f| *f >= l && *f <= u));
            let expect_sat = once.at_lower.iter().any(|&b| b) && once.at_upper.iter().any(|&b| b);
            prop_assert_eq!(once.saturated, expect_sat);
        }
    }
}
