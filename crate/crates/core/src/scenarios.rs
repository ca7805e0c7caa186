//! Built-in run configurations used by the CLI and the test suites.

use crate::config::{MicroSpec, NamedCurve, RunConfig, SimulatorSpec, TrainerSpec, DEFAULT_EPOCHS, DEFAULT_ITERATIONS};
use crate::manifest::ClassSpec;
use crate::optimizer::Tolerances;
use crate::trainers::{Cluster, LearningCurve, SyntheticTask};

/// Simulator run with start factor 0.5 and limits `[0.05, 0.95]` for every class.
pub fn sim_config(run_id: &str, curves: &[(&str, LearningCurve)], max_samples: u64, noise: f64) -> RunConfig {
    RunConfig {
        run_id: run_id.into(),
        classes: curves.iter().map(|(name, _)| ClassSpec::new(*name, max_samples)).collect(),
        manifest: None,
        trainer: TrainerSpec::Sim(SimulatorSpec {
            curves: curves.iter().map(|(name, c)| NamedCurve { class: name.to_string(), curve: *c }).collect(),
            ramp_epochs: 5,
            noise,
            seed: 17,
            available: None,
        }),
        objective: "accuracy".into(),
        iterations: DEFAULT_ITERATIONS,
        epochs: DEFAULT_EPOCHS,
        window: None,
        seed: 7,
        tolerances: Tolerances::default(),
        out_dir: None,
    }
}

/// Four classes sharing ceiling and exponent with difficulties 2, 4, 6, 8.
pub fn default_sim() -> RunConfig {
    sim_config(
        "sim-default",
        &[
            ("alpha", LearningCurve::new(0.9, 2.0, 0.5)),
            ("bravo", LearningCurve::new(0.9, 4.0, 0.5)),
            ("charlie", LearningCurve::new(0.9, 6.0, 0.5)),
            ("delta", LearningCurve::new(0.9, 8.0, 0.5)),
        ],
        2000,
        0.005,
    )
}

/// [`default_sim`] with class `alpha` asked to sit 0.05 above the others.
pub fn offset_sim() -> RunConfig {
    let mut cfg = default_sim();
    cfg.run_id = "sim-offset".into();
    cfg.classes[0].offset = 0.05;
    cfg
}

/// Two classes too far apart to equalize inside narrow limits.
pub fn saturating_sim() -> RunConfig {
    let mut cfg = sim_config(
        "sim-saturating",
        &[("easy", LearningCurve::new(0.95, 0.05, 0.5)), ("hard", LearningCurve::new(0.95, 5.0, 0.5))],
        2000,
        0.0,
    );
    for c in &mut cfg.classes {
        c.lower = 0.3;
        c.upper = 0.7;
    }
    cfg
}

/// Noiseless two-class instance: `a = (0.9, 0.9)`, `b = (0.5, 2.0)`, `beta = 0.5`.
pub fn two_class_reference() -> RunConfig {
    sim_config(
        "sim-two-class",
        &[("first", LearningCurve::new(0.9, 0.5, 0.5)), ("second", LearningCurve::new(0.9, 2.0, 0.5))],
        2000,
        0.0,
    )
}

/// Noiseless two-class instance at a lower accuracy level.
pub fn two_class_oracle() -> RunConfig {
    sim_config(
        "sim-oracle-2",
        &[("first", LearningCurve::new(0.9, 4.0, 0.6)), ("second", LearningCurve::new(0.9, 10.0, 0.6))],
        2000,
        0.0,
    )
}

/// Noiseless three-class instance.
pub fn three_class_oracle() -> RunConfig {
    sim_config(
        "sim-oracle-3",
        &[
            ("first", LearningCurve::new(0.9, 2.0, 0.5)),
            ("second", LearningCurve::new(0.9, 4.0, 0.5)),
            ("third", LearningCurve::new(0.9, 6.0, 0.5)),
        ],
        2000,
        0.0,
    )
}

/// Three 2-D Gaussian clusters on a triangle with spreads 0.6, 1.0 and 1.6.
pub fn micro_task() -> SyntheticTask {
    let radius = 2.0;
    let cluster = |class: &str, k: f64, spread: f64| {
        let angle = k * 2.0 * std::f64::consts::PI / 3.0;
        Cluster { class: class.into(), center: vec![radius * angle.cos(), radius * angle.sin()], spread }
    };
    SyntheticTask {
        clusters: vec![cluster("tight", 0.0, 0.6), cluster("medium", 1.0, 1.0), cluster("diffuse", 2.0, 1.6)],
        train_per_class: 1000,
        validation_per_class: 1000,
        seed: 23,
    }
}

pub fn default_micro() -> RunConfig {
    let task = micro_task();
    RunConfig {
        run_id: "micro-default".into(),
        classes: task.clusters.iter().map(|c| ClassSpec::new(c.class.clone(), task.train_per_class)).collect(),
        manifest: None,
        trainer: TrainerSpec::Micro(MicroSpec { task, learning_rate: 0.5 }),
        objective: "accuracy".into(),
        iterations: DEFAULT_ITERATIONS,
        epochs: 30,
        window: None,
        seed: 7,
        tolerances: Tolerances::default(),
        out_dir: None,
    }
}
