use std::fs;

use bicdo::orchestrator;
use bicdo::report::{
    self, grid_oracle, read_factor_table, read_objective_table, write_factor_table, write_objective_table,
};
use bicdo::scenarios;
use bicdo::trainers::LearningCurve;
use tempfile::tempdir;

#[test]
fn plot_tables_roundtrip() {
    let dir = tempdir().unwrap();
    let mut cfg = scenarios::default_sim();
    cfg.out_dir = Some(dir.path().to_path_buf());
    let h = orchestrator::run(&cfg).unwrap();
    let summary = report::summarize(&h).unwrap();
    let plots = dir.path().join("plots");
    report::emit_plot_data(&summary, &plots).unwrap();

    let factor_bytes = fs::read(plots.join(report::FACTORS_FILE)).unwrap();
    let factors = read_factor_table(&factor_bytes).unwrap();
    assert_eq!(factors, report::factor_rows(&summary));
    assert_eq!(write_factor_table(&factors), factor_bytes);
    assert_eq!(factors.len(), h.records.len() * 4);

    let objective_bytes = fs::read(plots.join(report::OBJECTIVES_FILE)).unwrap();
    let objectives = read_objective_table(&objective_bytes).unwrap();
    assert_eq!(objectives, report::objective_rows(&summary));
    assert_eq!(write_objective_table(&objectives), objective_bytes);

    let table = fs::read_to_string(plots.join(report::SUMMARY_FILE)).unwrap();
    assert_eq!(table.lines().count(), 6);
    assert!(table.lines().last().unwrap().starts_with("all,"));
}

#[test]
fn summary_matches_history() {
    let dir = tempdir().unwrap();
    let mut cfg = scenarios::default_sim();
    cfg.out_dir = Some(dir.path().to_path_buf());
    let h = orchestrator::run(&cfg).unwrap();
    let s = report::summarize(&h).unwrap();
    let last = h.last().unwrap();
    assert_eq!(s.final_variance, last.variance);
    assert_eq!(s.final_factors, last.next_factors);
    assert!((s.final_normalized.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(s.total_samples, last.quotas.iter().sum::<u64>());
    assert_eq!(s.mean_series.len(), h.records.len());
}

#[test]
fn empty_history_has_no_summary() {
    let dir = tempdir().unwrap();
    let mut cfg = scenarios::default_sim();
    cfg.out_dir = Some(dir.path().to_path_buf());
    let mut h = orchestrator::run(&cfg).unwrap();
    h.records.clear();
    assert!(matches!(report::summarize(&h), Err(report::ReportError::EmptyHistory)));
}

#[test]
fn reference_instance_lands_near_the_grid_optimum() {
    // a = (0.9, 0.9), b = (0.5, 2.0), beta = 0.5
    let dir = tempdir().unwrap();
    let mut cfg = scenarios::two_class_reference();
    cfg.out_dir = Some(dir.path().to_path_buf());
    let h = orchestrator::run(&cfg).unwrap();
    let curves = [LearningCurve::new(0.9, 0.5, 0.5), LearningCurve::new(0.9, 2.0, 0.5)];
    let quotas = h.final_quotas().unwrap().to_vec();
    let r = grid_oracle(&curves, quotas.iter().sum(), 0.01).unwrap().with_bicdo(&curves, &quotas);
    assert!(r.max_share_gap().unwrap() <= 0.10, "{r:?}");
    assert!(quotas[1] > quotas[0]);
}
