//! Linear softmax classifier on synthetic Gaussian clusters.
//!
//! The task generates a fixed training pool (exposed as a manifest) and a
//! validation split once per run. Each iteration trains from scratch on the
//! sampled subset by full-batch gradient descent and reports per-class
//! validation scores after every epoch.

use std::collections::HashMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{validate_matrix, Trainer, TrainerError, TrainerMeta, TrainerRequest, TrainerResponse};
use crate::manifest::DatasetManifest;
use crate::optimizer::Objective;
use crate::sampler::{mix_seed, SampledManifest};

const TRAIN_STREAM: u64 = 0x7472_6169_6e00_0000;
const VALIDATION_STREAM: u64 = 0x7661_6c69_6400_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub class: String,
    pub center: Vec<f64>,
    /// Isotropic standard deviation.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub clusters: Vec<Cluster>,
    pub train_per_class: u64,
    pub validation_per_class: usize,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn dim(&self) -> usize {
        self.clusters.first().map(|c| c.center.len()).unwrap_or(0)
    }

    pub fn generate(&self) -> Result<MicroDataset, TrainerError> {
        let dim = self.dim();
        if dim == 0 || self.clusters.iter().any(|c| c.center.len() != dim) {
            return Err(TrainerError::DegenerateData("cluster centers must share a non-zero dimension".into()));
        }
        if self.clusters.iter().any(|c| !(c.spread.is_finite() && c.spread >= 0.0)) {
            return Err(TrainerError::DegenerateData("cluster spread must be finite and >= 0".into()));
        }
        let mut clusters = self.clusters.clone();
        clusters.sort_by(|a, b| a.class.cmp(&b.class));

        let counts: Vec<(String, u64)> = clusters.iter().map(|c| (c.class.clone(), self.train_per_class)).collect();
        let manifest =
            DatasetManifest::synthetic("micro", &counts).map_err(|e| TrainerError::DegenerateData(e.to_string()))?;

        let mut train = HashMap::with_capacity(manifest.samples().len());
        let mut validation = Vec::with_capacity(clusters.len() * self.validation_per_class);
        for (class, cluster) in clusters.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, TRAIN_STREAM, class as u64));
            // synthetic locators sort in generation order within a class
            for s in manifest.samples().iter().filter(|s| s.class_id == class) {
                train.insert(s.locator.clone(), draw(cluster, &mut rng));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, VALIDATION_STREAM, class as u64));
            for _ in 0..self.validation_per_class {
                validation.push((draw(cluster, &mut rng), class));
            }
        }
        Ok(MicroDataset { manifest, train, validation, dim })
    }
}

fn draw(cluster: &Cluster, rng: &mut ChaCha8Rng) -> Vec<f64> {
    cluster
        .center
        .iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            m + cluster.spread * z
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MicroDataset {
    pub manifest: DatasetManifest,
    train: HashMap<String, Vec<f64>>,
    validation: Vec<(Vec<f64>, usize)>,
    dim: usize,
}

impl MicroDataset {
    pub fn validation_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.manifest.n_classes()];
        for (_, c) in &self.validation {
            counts[*c] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct MicroTrainer {
    data: MicroDataset,
    learning_rate: f64,
}

impl MicroTrainer {
    pub fn new(task: &SyntheticTask, learning_rate: f64) -> Result<Self, TrainerError> {
        Ok(Self { data: task.generate()?, learning_rate })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.data.manifest
    }

    pub fn dataset(&self) -> &MicroDataset {
        &self.data
    }

    /// Trains for `epochs` full-batch steps; returns `[class][epoch]` scores.
    pub fn fit(
        &self,
        sample: &SampledManifest,
        epochs: usize,
        objective: Objective,
    ) -> Result<Vec<Vec<f64>>, TrainerError> {
        let n = self.data.manifest.n_classes();
        if let Some(c) = self.data.validation_counts().iter().position(|&k| k < 2) {
            return Err(TrainerError::DegenerateData(format!(
                "class `{}` has fewer than 2 validation samples",
                self.data.manifest.classes()[c]
            )));
        }
        let mut xs: Vec<&[f64]> = Vec::with_capacity(sample.samples.len());
        let mut ys: Vec<usize> = Vec::with_capacity(sample.samples.len());
        for s in &sample.samples {
            let x = self
                .data
                .train
                .get(&s.locator)
                .ok_or_else(|| TrainerError::DegenerateData(format!("unknown locator `{}`", s.locator)))?;
            xs.push(x);
            ys.push(s.class_id);
        }
        if xs.is_empty() {
            return Err(TrainerError::DegenerateData("empty training set".into()));
        }

        let mut model = SoftmaxModel::new(self.data.dim, n);
        let mut scores = vec![Vec::with_capacity(epochs); n];
        for _ in 0..epochs {
            model.step(&xs, &ys, self.learning_rate);
            for (c, s) in model.evaluate(&self.data.validation, objective).into_iter().enumerate() {
                scores[c].push(s);
            }
        }
        Ok(scores)
    }
}

impl Trainer for MicroTrainer {
    fn train(&mut self, sample: &SampledManifest, request: &TrainerRequest) -> Result<TrainerResponse, TrainerError> {
        let started = Instant::now();
        let rows = self.fit(sample, request.epochs, request.objective)?;
        let matrix = validate_matrix(rows, request)?;
        Ok(TrainerResponse {
            matrix,
            meta: TrainerMeta {
                name: "builtin-micro".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                wall_time_seconds: started.elapsed().as_secs_f64(),
            },
        })
    }
}

/// Weights are `(dim + 1) x n_classes`, the last row being the bias.
struct SoftmaxModel {
    dim: usize,
    n: usize,
    weights: Vec<f64>,
}

impl SoftmaxModel {
    fn new(dim: usize, n: usize) -> Self {
        Self { dim, n, weights: vec![0.0; (dim + 1) * n] }
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        let bias = &self.weights[self.dim * self.n..];
        out.copy_from_slice(bias);
        for (j, &xj) in x.iter().enumerate() {
            let row = &self.weights[j * self.n..(j + 1) * self.n];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xj * w;
            }
        }
    }

    fn step(&mut self, xs: &[&[f64]], ys: &[usize], lr: f64) {
        let mut grad = vec![0.0; self.weights.len()];
        let mut z = vec![0.0; self.n];
        for (x, &y) in xs.iter().zip(ys) {
            self.logits(x, &mut z);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in z.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for (k, v) in z.iter_mut().enumerate() {
                *v /= total;
                if k == y {
                    *v -= 1.0;
                }
            }
            for (j, &xj) in x.iter().enumerate() {
                for k in 0..self.n {
                    grad[j * self.n + k] += xj * z[k];
                }
            }
            for k in 0..self.n {
                grad[self.dim * self.n + k] += z[k];
            }
        }
        let scale = lr / xs.len() as f64;
        for (w, g) in self.weights.iter_mut().zip(&grad) {
            *w -= scale * g;
        }
    }

    fn predict(&self, x: &[f64], z: &mut [f64]) -> usize {
        self.logits(x, z);
        let mut best = 0;
        for k in 1..self.n {
            if z[k] > z[best] {
                best = k;
            }
        }
        best
    }

    fn evaluate(&self, validation: &[(Vec<f64>, usize)], objective: Objective) -> Vec<f64> {
        let mut true_pos = vec![0usize; self.n];
        let mut actual = vec![0usize; self.n];
        let mut predicted = vec![0usize; self.n];
        let mut z = vec![0.0; self.n];
        for (x, y) in validation {
            let p = self.predict(x, &mut z);
            actual[*y] += 1;
            predicted[p] += 1;
            if p == *y {
                true_pos[p] += 1;
            }
        }
        (0..self.n)
            .map(|c| {
                let denom = match objective {
                    Objective::Accuracy | Objective::Recall => actual[c],
                    Objective::Precision => predicted[c],
                };
                if denom == 0 {
                    0.0
                } else {
                    true_pos[c] as f64 / denom as f64
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{sample_subset, QuotaVector};

    fn task(centers: &[(&str, [f64; 2], f64)], train: u64, val: usize) -> SyntheticTask {
        SyntheticTask {
            clusters: centers
                .iter()
                .map(|(name, c, s)| Cluster { class: name.to_string(), center: c.to_vec(), spread: *s })
                .collect(),
            train_per_class: train,
            validation_per_class: val,
            seed: 11,
        }
    }

    fn fit(t: &SyntheticTask, quotas: Vec<u64>, epochs: usize, objective: Objective) -> Vec<Vec<f64>> {
        let trainer = MicroTrainer::new(t, 0.5).unwrap();
        let q = QuotaVector { iteration: 0, quotas };
        let s = sample_subset(trainer.manifest(), &q, 5).unwrap();
        trainer.fit(&s, epochs, objective).unwrap()
    }

    #[test]
    fn separated_clusters_are_learned() {
        // centers 8 apart with unit spread: Bayes error is Phi(-4) ~ 3e-5
        let t = task(&[("a", [-4.0, 0.0], 1.0), ("b", [4.0, 0.0], 1.0)], 200, 500);
        for q in [10, 25, 200] {
            let scores = fit(&t, vec![q, q], 40, Objective::Accuracy);
            for row in &scores {
                assert!(*row.last().unwrap() >= 0.95, "quota {q}: {row:?}");
            }
        }
    }

    #[test]
    fn identical_clusters_sit_at_chance() {
        let t = task(&[("a", [0.0, 0.0], 1.0), ("b", [0.0, 0.0], 1.0), ("c", [0.0, 0.0], 1.0)], 300, 1000);
        let scores = fit(&t, vec![300, 300, 300], 30, Objective::Recall);
        let mean_final: f64 = scores.iter().map(|r| r.last().unwrap()).sum::<f64>() / 3.0;
        assert!((mean_final - 1.0 / 3.0).abs() < 0.03, "{mean_final}");
    }

    #[test]
    fn deterministic_and_fixed_validation() {
        let t = task(&[("a", [-1.0, 0.0], 1.0), ("b", [1.0, 0.0], 1.0)], 100, 50);
        assert_eq!(fit(&t, vec![40, 60], 10, Objective::Accuracy), fit(&t, vec![40, 60], 10, Objective::Accuracy));
        let one = t.generate().unwrap();
        let two = t.generate().unwrap();
        assert_eq!(one.validation, two.validation);
        assert_eq!(one.validation_counts(), vec![50, 50]);
    }

    #[test]
    fn more_data_raises_recall() {
        let t = task(&[("a", [-0.5, 0.0], 1.0), ("b", [0.5, 0.0], 1.0)], 500, 1000);
        let few = fit(&t, vec![50, 500], 40, Objective::Recall);
        let many = fit(&t, vec![500, 500], 40, Objective::Recall);
        assert!(many[0].last() > few[0].last());
    }

    #[test]
    fn precision_differs_from_recall() {
        let t = task(&[("a", [-0.5, 0.0], 1.0), ("b", [0.5, 0.0], 1.0)], 500, 400);
        let recall = fit(&t, vec![50, 500], 30, Objective::Recall);
        let precision = fit(&t, vec![50, 500], 30, Objective::Precision);
        assert_ne!(recall, precision);
        assert!(precision.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn too_few_validation_samples() {
        let t = task(&[("a", [0.0, 0.0], 1.0), ("b", [1.0, 0.0], 1.0)], 10, 1);
        let trainer = MicroTrainer::new(&t, 0.5).unwrap();
        let q = QuotaVector { iteration: 0, quotas: vec![5, 5] };
        let s = sample_subset(trainer.manifest(), &q, 0).unwrap();
        assert!(matches!(trainer.fit(&s, 3, Objective::Accuracy), Err(TrainerError::DegenerateData(_))));
    }
}
