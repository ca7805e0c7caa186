//! Learning-curve simulator.
//!
//! Each class follows a saturating power law in its training quota `d`:
//! `plateau(d) = clamp(a - b * d^(-beta), 0.01, 1)`. Epoch `i` reports
//! `plateau * min(1, (i + 1) / r)` plus Gaussian noise, clipped to `(0, 1]`.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{validate_matrix, Trainer, TrainerError, TrainerMeta, TrainerRequest, TrainerResponse};
use crate::sampler::{mix_seed, SampledManifest};

pub const PLATEAU_FLOOR: f64 = 0.01;
/// Lower clip for noisy epoch values.
pub const NOISE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    /// Ceiling `a`.
    pub ceiling: f64,
    /// Difficulty `b`.
    pub difficulty: f64,
    /// Exponent `beta`.
    pub exponent: f64,
}

impl LearningCurve {
    pub fn new(ceiling: f64, difficulty: f64, exponent: f64) -> Self {
        Self { ceiling, difficulty, exponent }
    }

    pub fn plateau(&self, quota: f64) -> f64 {
        (self.ceiling - self.difficulty * quota.powf(-self.exponent)).clamp(PLATEAU_FLOOR, 1.0)
    }

    fn check(&self) -> Result<(), TrainerError> {
        let ok = self.ceiling.is_finite()
            && self.ceiling > 0.0
            && self.ceiling <= 1.0
            && self.difficulty.is_finite()
            && self.difficulty >= 0.0
            && self.exponent.is_finite()
            && self.exponent > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainerError::InvalidCurve(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveParams {
    /// One curve per class, in manifest class order.
    pub curves: Vec<LearningCurve>,
    /// Epochs to reach the plateau.
    pub ramp_epochs: usize,
    /// Standard deviation of per-epoch noise.
    pub noise: f64,
    pub seed: u64,
}

impl LearningCurveParams {
    pub fn validate(&self) -> Result<(), TrainerError> {
        for c in &self.curves {
            c.check()?;
        }
        if self.ramp_epochs == 0 {
            return Err(TrainerError::InvalidCurve("ramp_epochs must be at least 1".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(TrainerError::InvalidCurve(format!("noise {} must be >= 0", self.noise)));
        }
        Ok(())
    }

    pub fn ramp(&self, epoch: usize) -> f64 {
        ((epoch + 1) as f64 / self.ramp_epochs as f64).min(1.0)
    }

    /// Noiseless plateau per class at the given quotas.
    pub fn plateaus(&self, quotas: &[f64]) -> Vec<f64> {
        self.curves.iter().zip(quotas).map(|(c, &d)| c.plateau(d)).collect()
    }

    pub fn simulate(&self, quotas: &[u64], request: &TrainerRequest) -> Result<Vec<Vec<f64>>, TrainerError> {
        self.validate()?;
        if quotas.len() != self.curves.len() {
            return Err(TrainerError::DimensionMismatch(format!(
                "{} quotas for {} curves",
                quotas.len(),
                self.curves.len()
            )));
        }
        let rows = self
            .curves
            .iter()
            .zip(quotas)
            .enumerate()
            .map(|(class, (curve, &d))| {
                let plateau = curve.plateau(d as f64);
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, request.seed, class as u64));
                (0..request.epochs)
                    .map(|i| {
                        let clean = plateau * self.ramp(i);
                        if self.noise == 0.0 {
                            clean
                        } else {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            (clean + self.noise * z).clamp(NOISE_FLOOR, 1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(rows)
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedTrainer {
    params: LearningCurveParams,
}

impl SimulatedTrainer {
    pub fn new(params: LearningCurveParams) -> Result<Self, TrainerError> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &LearningCurveParams {
        &self.params
    }
}

impl Trainer for SimulatedTrainer {
    fn train(&mut self, sample: &SampledManifest, request: &TrainerRequest) -> Result<TrainerResponse, TrainerError> {
        let started = Instant::now();
        let rows = self.params.simulate(&sample.class_counts(), request)?;
        let matrix = validate_matrix(rows, request)?;
        Ok(TrainerResponse {
            matrix,
            meta: TrainerMeta {
                name: "builtin-sim".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                wall_time_seconds: started.elapsed().as_secs_f64(),
            },
        })
    }
}
