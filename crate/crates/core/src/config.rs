//! Run configuration (JSON) and its resolution into a manifest, validated
//! class specs and a trainer.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{validate_config, ClassSpec, ConfigError, DatasetManifest, ManifestError, ValidatedSpecs};
use crate::optimizer::{EpochWindow, Objective, Tolerances, UnsupportedObjective};
use crate::trainers::{
    ExternalTrainer, LearningCurve, LearningCurveParams, MicroTrainer, SimulatedTrainer, SyntheticTask, Trainer,
    TrainerError,
};

pub const DEFAULT_ITERATIONS: usize = 150;
pub const DEFAULT_EPOCHS: usize = 20;

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Specs(#[from] ConfigError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Objective(#[from] UnsupportedObjective),
    #[error("trainer setup: {0}")]
    Trainer(#[from] TrainerError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("cannot read configuration {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    pub classes: Vec<ClassSpec>,
    /// Manifest table or directory; built-in trainers generate one when absent.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    pub trainer: TrainerSpec,
    #[serde(default = "default_objective")]
    pub objective: String,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Defaults to the trailing 20% of epochs.
    #[serde(default)]
    pub window: Option<EpochWindow>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Not part of the recorded snapshot: identical runs in different
    /// directories must produce identical histories.
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
}

fn default_run_id() -> String {
    "run".into()
}

fn default_objective() -> String {
    Objective::Accuracy.to_string()
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainerSpec {
    Sim(SimulatorSpec),
    Micro(MicroSpec),
    External(ExternalSpec),
}

impl TrainerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TrainerSpec::Sim(_) => "sim",
            TrainerSpec::Micro(_) => "micro",
            TrainerSpec::External(_) => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCurve {
    pub class: String,
    #[serde(flatten)]
    pub curve: LearningCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorSpec {
    pub curves: Vec<NamedCurve>,
    #[serde(default = "default_ramp")]
    pub ramp_epochs: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    /// Samples per class in the generated manifest; defaults to each class's `max_samples`.
    #[serde(default)]
    pub available: Option<u64>,
}

fn default_ramp() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroSpec {
    pub task: SyntheticTask,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
}

fn default_learning_rate() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_timeout() -> f64 {
    3600.0
}

/// Everything a run needs, resolved from a [`RunConfig`].
pub struct Prepared {
    pub manifest: DatasetManifest,
    pub specs: ValidatedSpecs,
    pub objective: Objective,
    pub window: EpochWindow,
    pub trainer: Box<dyn Trainer>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, SetupError> {
        let bytes = fs::read(path).map_err(|source| SetupError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, SetupError> {
        serde_json::from_slice(bytes).map_err(|e| SetupError::Parse(e.to_string()))
    }

    pub fn objective(&self) -> Result<Objective, SetupError> {
        Ok(self.objective.parse()?)
    }

    pub fn window(&self) -> Result<EpochWindow, SetupError> {
        if self.epochs == 0 {
            return Err(SetupError::Invalid("epochs must be at least 1".into()));
        }
        match self.window {
            Some(w) => EpochWindow::new(w.start, w.end, self.epochs).map_err(|e| SetupError::Invalid(e.to_string())),
            None => Ok(EpochWindow::trailing(self.epochs)),
        }
    }

    /// Checks everything that does not need the manifest.
    pub fn check(&self) -> Result<(), SetupError> {
        if self.iterations == 0 {
            return Err(SetupError::Invalid("iterations must be at least 1".into()));
        }
        self.window()?;
        self.objective()?;
        let t = &self.tolerances;
        if !(t.factor > 0.0 && t.variance > 0.0 && t.patience >= 1) {
            return Err(SetupError::Invalid(format!("tolerances must be positive: {t:?}")));
        }
        if let TrainerSpec::External(e) = &self.trainer {
            if e.command.is_empty() {
                return Err(SetupError::Invalid("external trainer needs a command".into()));
            }
            if !(e.timeout_secs > 0.0 && e.timeout_secs.is_finite()) {
                return Err(SetupError::Invalid("external trainer timeout must be positive".into()));
            }
        }
        Ok(())
    }

    /// Ingests or generates the manifest without building a trainer.
    pub fn resolve_manifest(&self) -> Result<DatasetManifest, SetupError> {
        if let Some(path) = &self.manifest {
            return Ok(DatasetManifest::ingest(path)?);
        }
        match &self.trainer {
            TrainerSpec::Sim(sim) => {
                let counts = self
                    .classes
                    .iter()
                    .map(|c| (c.class.clone(), sim.available.unwrap_or(c.max_samples)))
                    .collect::<Vec<_>>();
                Ok(DatasetManifest::synthetic("sim", &counts)?)
            }
            TrainerSpec::Micro(micro) => Ok(micro.task.generate()?.manifest),
            TrainerSpec::External(_) => Err(SetupError::Invalid("an external trainer needs a manifest".into())),
        }
    }

    /// Resolves manifest, specs and trainer. External trainers exchange files under `work_dir`.
    pub fn prepare(&self, work_dir: &Path) -> Result<Prepared, SetupError> {
        self.check()?;
        let manifest = self.resolve_manifest()?;
        let specs = validate_config(&self.classes, &manifest)?;
        let trainer: Box<dyn Trainer> = match &self.trainer {
            TrainerSpec::Sim(sim) => Box::new(SimulatedTrainer::new(sim.params_for(&manifest)?)?),
            TrainerSpec::Micro(micro) => {
                let trainer = MicroTrainer::new(&micro.task, micro.learning_rate)?;
                if self.manifest.is_some() && trainer.manifest() != &manifest {
                    return Err(SetupError::Invalid(
                        "the micro trainer only accepts the manifest generated by its own task".into(),
                    ));
                }
                Box::new(trainer)
            }
            TrainerSpec::External(e) => Box::new(ExternalTrainer::new(
                e.command.clone(),
                Duration::from_secs_f64(e.timeout_secs),
                work_dir.join("bundles"),
            )),
        };
        Ok(Prepared { manifest, specs, objective: self.objective()?, window: self.window()?, trainer })
    }
}

impl SimulatorSpec {
    /// Curves ordered by the manifest's class table.
    pub fn params_for(&self, manifest: &DatasetManifest) -> Result<LearningCurveParams, SetupError> {
        let curves = manifest
            .classes()
            .iter()
            .map(|name| {
                self.curves
                    .iter()
                    .find(|c| &c.class == name)
                    .map(|c| c.curve)
                    .ok_or_else(|| SetupError::Invalid(format!("no learning curve for class `{name}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if self.curves.len() != curves.len() {
            return Err(SetupError::Invalid("learning curves name classes missing from the manifest".into()));
        }
        let params = LearningCurveParams { curves, ramp_epochs: self.ramp_epochs, noise: self.noise, seed: self.seed };
        params.validate()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;

    #[test]
    fn json_roundtrip_skips_out_dir() {
        let mut cfg = scenarios::default_sim();
        cfg.out_dir = Some("/tmp/x".into());
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(!text.contains("out_dir"));
        let back = RunConfig::from_json(text.as_bytes()).unwrap();
        assert_eq!(back.out_dir, None);
        assert_eq!(back.classes, cfg.classes);
        assert_eq!(back.trainer, cfg.trainer);
    }

    #[test]
    fn minimal_document_gets_defaults() {
        let doc = r#"{
            "classes": [
                {"class": "a", "max_samples": 100, "factor": 0.5, "lower": 0.05, "upper": 0.95},
                {"class": "b", "max_samples": 100, "factor": 0.5, "lower": 0.05, "upper": 0.95}
            ],
            "trainer": {"kind": "sim", "curves": [
                {"class": "a", "ceiling": 0.9, "difficulty": 1.0, "exponent": 0.5},
                {"class": "b", "ceiling": 0.9, "difficulty": 2.0, "exponent": 0.5}
            ]}
        }"#;
        let cfg = RunConfig::from_json(doc.as_bytes()).unwrap();
        assert_eq!(cfg.iterations, 150);
        assert_eq!(cfg.epochs, 20);
        assert_eq!(cfg.window().unwrap(), EpochWindow { start: 16, end: 19 });
        assert_eq!(cfg.objective().unwrap(), Objective::Accuracy);
        let p = cfg.prepare(Path::new("/unused")).unwrap();
        assert_eq!(p.manifest.availability(), [100, 100]);
    }

    #[test]
    fn rejects_bad_settings() {
        let mut cfg = scenarios::default_sim();
        cfg.objective = "f1".into();
        assert!(matches!(cfg.check(), Err(SetupError::Objective(_))));

        let mut cfg = scenarios::default_sim();
        cfg.iterations = 0;
        assert!(matches!(cfg.check(), Err(SetupError::Invalid(_))));

        let mut cfg = scenarios::default_sim();
        cfg.window = Some(EpochWindow { start: 5, end: 20 });
        assert!(cfg.check().is_err());

        let mut cfg = scenarios::default_sim();
        cfg.tolerances.patience = 0;
        assert!(cfg.check().is_err());

        let mut cfg = scenarios::default_sim();
        cfg.classes[0].offset = 1.5;
        assert!(matches!(
            cfg.prepare(Path::new("/unused")),
            Err(SetupError::Specs(ConfigError::OffsetOutOfRange { .. }))
        ));

        let mut cfg = scenarios::default_sim();
        cfg.trainer = TrainerSpec::External(ExternalSpec { command: vec!["true".into()], timeout_secs: 1.0 });
        assert!(matches!(cfg.prepare(Path::new("/unused")), Err(SetupError::Invalid(_))));

        assert!(matches!(RunConfig::from_json(b"{\"classes\": []}"), Err(SetupError::Parse(_))));
    }
}
