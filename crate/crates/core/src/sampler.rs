//! Per-class quotas and seeded subset selection.
//!
//! Every class draws from its own ChaCha8 stream seeded by
//! [`mix_seed`]`(base_seed, iteration, class_id)`. The mixing function and the
//! partial Fisher-Yates draw below are part of the reproducibility contract:
//! changing either changes every recorded run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{write_table, DatasetManifest, SampleRecord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("class {class}: quota {quota} exceeds availability {available}")]
    QuotaExceedsAvailability { class: usize, quota: u64, available: u64 },
    #[error("class {class}: quota must be at least 1")]
    ZeroQuota { class: usize },
    #[error("quota vector has {got} entries, manifest has {expected} classes")]
    LengthMismatch { expected: usize, got: usize },
}

/// Stream id used for trainer seeds so they never collide with a class stream.
pub const TRAINER_STREAM: u64 = u64::MAX;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(splitmix64(base) ^ iteration) ^ stream)`.
pub fn mix_seed(base_seed: u64, iteration: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base_seed) ^ iteration) ^ stream)
}

/// `d_c = max(1, round_half_even(D_c * f_c))`.
pub fn compute_quota(max_samples: u64, factor: f64) -> u64 {
    let d = (max_samples as f64 * factor).round_ties_even();
    (d.max(1.0) as u64).min(max_samples.max(1))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaVector {
    pub iteration: u64,
    pub quotas: Vec<u64>,
}

impl QuotaVector {
    pub fn from_factors(iteration: u64, max_samples: &[u64], factors: &[f64]) -> Self {
        let quotas = max_samples.iter().zip(factors).map(|(&d, &f)| compute_quota(d, f)).collect();
        Self { iteration, quotas }
    }

    pub fn total(&self) -> u64 {
        self.quotas.iter().sum()
    }
}

/// Sidecar metadata written next to a sampled table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub iteration: u64,
    pub classes: Vec<String>,
    pub quotas: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledManifest {
    pub samples: Vec<SampleRecord>,
    pub classes: Vec<String>,
    pub quotas: QuotaVector,
    pub seed: u64,
}

impl SampledManifest {
    pub fn iteration(&self) -> u64 {
        self.quotas.iteration
    }

    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.classes.len()];
        for s in &self.samples {
            counts[s.class_id] += 1;
        }
        counts
    }

    /// Same `locator,label` format as a full manifest.
    pub fn to_csv(&self) -> Vec<u8> {
        write_table(self.samples.iter())
    }

    pub fn meta(&self) -> SampleMeta {
        SampleMeta {
            seed: self.seed,
            iteration: self.quotas.iteration,
            classes: self.classes.clone(),
            quotas: self.quotas.quotas.clone(),
        }
    }
}

/// Picks `amount` distinct indices out of `0..len` by partial Fisher-Yates, sorted ascending.
pub fn select_indices(rng: &mut ChaCha8Rng, len: usize, amount: usize) -> Vec<usize> {
    debug_assert!(amount <= len);
    let mut pool: Vec<usize> = (0..len).collect();
    for i in 0..amount {
        let j = rng.random_range(i..len);
        pool.swap(i, j);
    }
    pool.truncate(amount);
    pool.sort_unstable();
    pool
}

pub fn sample_subset(
    manifest: &DatasetManifest,
    quotas: &QuotaVector,
    base_seed: u64,
) -> Result<SampledManifest, SampleError> {
    let n = manifest.n_classes();
    if quotas.quotas.len() != n {
        return Err(SampleError::LengthMismatch { expected: n, got: quotas.quotas.len() });
    }
    for (class, (&quota, &available)) in quotas.quotas.iter().zip(manifest.availability()).enumerate() {
        if quota == 0 {
            return Err(SampleError::ZeroQuota { class });
        }
        if quota > available {
            return Err(SampleError::QuotaExceedsAvailability { class, quota, available });
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, s) in manifest.samples().iter().enumerate() {
        members[s.class_id].push(i);
    }
    let mut chosen = Vec::with_capacity(quotas.total() as usize);
    for (class, pool) in members.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(base_seed, quotas.iteration, class as u64));
        let picks = select_indices(&mut rng, pool.len(), quotas.quotas[class] as usize);
        chosen.extend(picks.into_iter().map(|k| pool[k]));
    }
    chosen.sort_unstable();
    let samples = chosen.into_iter().map(|i| manifest.samples()[i].clone()).collect();
    Ok(SampledManifest { samples, classes: manifest.classes().to_vec(), quotas: quotas.clone(), seed: base_seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest(counts: &[u64]) -> DatasetManifest {
        let classes: Vec<(String, u64)> = counts.iter().enumerate().map(|(i, &c)| (format!("c{i}"), c)).collect();
        DatasetManifest::synthetic("t", &classes).unwrap()
    }

    #[test]
    fn quota_examples() {
        assert_eq!(compute_quota(2000, 0.5), 1000);
        assert_eq!(compute_quota(2000, 0.25), 500);
        assert_eq!(compute_quota(2000, 0.0003), 1);
        // ties go to even
        assert_eq!(compute_quota(5, 0.5), 2);
        assert_eq!(compute_quota(7, 0.5), 4);
        assert_eq!(compute_quota(10, 1.0), 10);
    }

    #[test]
    fn splitmix_reference_values() {
        // SplitMix64 stream for state 0 (first output), and a pinned mix.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix_seed(0, 0, 0), splitmix64(splitmix64(splitmix64(0))));
    }

    #[test]
    fn full_quota_is_identity() {
        let m = manifest(&[5, 7, 3]);
        let q = QuotaVector { iteration: 3, quotas: m.availability().to_vec() };
        let s = sample_subset(&m, &q, 42).unwrap();
        assert_eq!(s.samples, m.samples());
        assert_eq!(s.to_csv(), m.to_csv());
    }

    #[test]
    fn deterministic_bytes() {
        let m = manifest(&[50, 60]);
        let q = QuotaVector { iteration: 1, quotas: vec![10, 20] };
        let a = sample_subset(&m, &q, 9).unwrap();
        let b = sample_subset(&m, &q, 9).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(serde_json::to_vec(&a.meta()).unwrap(), serde_json::to_vec(&b.meta()).unwrap());
    }

    #[test]
    fn quota_errors() {
        let m = manifest(&[5, 5]);
        let q = QuotaVector { iteration: 0, quotas: vec![6, 1] };
        assert_eq!(
            sample_subset(&m, &q, 0).unwrap_err(),
            SampleError::QuotaExceedsAvailability { class: 0, quota: 6, available: 5 }
        );
        let q = QuotaVector { iteration: 0, quotas: vec![1, 0] };
        assert_eq!(sample_subset(&m, &q, 0).unwrap_err(), SampleError::ZeroQuota { class: 1 });
        let q = QuotaVector { iteration: 0, quotas: vec![1] };
        assert!(matches!(sample_subset(&m, &q, 0).unwrap_err(), SampleError::LengthMismatch { .. }));
    }

    #[test]
    fn two_of_four_is_uniform() {
        // Oracle: the 6 possible 2-subsets of a 4-sample class, each with probability 1/6.
        let mut pairs = Vec::new();
        for a in 0..4usize {
            for b in (a + 1)..4 {
                pairs.push(vec![a, b]);
            }
        }
        assert_eq!(pairs.len(), 6);

        let m = manifest(&[4, 4]);
        let q = QuotaVector { iteration: 0, quotas: vec![2, 2] };
        let trials = 10_000u64;
        let mut counts = [0u64; 6];
        for seed in 0..trials {
            let s = sample_subset(&m, &q, seed).unwrap();
            let idx: Vec<usize> = s
                .samples
                .iter()
                .filter(|r| r.class_id == 0)
                .map(|r| m.samples().iter().position(|x| x == r).unwrap())
                .collect();
            let k = pairs.iter().position(|p| *p == idx).expect("selection is a 2-subset");
            counts[k] += 1;
        }
        let p = 1.0 / 6.0;
        let expected = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() <= 3.0 * sigma, "counts {counts:?}");
        }
    }

    proptest! {
        #[test]
        fn exact_counts_and_subset(seed in any::<u64>(), iteration in 0u64..1000,
                                   q0 in 1u64..=30, q1 in 1u64..=12, q2 in 1u64..=1) {
            let m = manifest(&[30, 12, 1]);
            let q = QuotaVector { iteration, quotas: vec![q0, q1, q2] };
            let s = sample_subset(&m, &q, seed).unwrap();
            prop_assert_eq!(s.class_counts(), q.quotas.clone());
            for r in &s.samples {
                prop_assert!(m.samples().contains(r));
            }
            // a different seed may change the selection but never the counts
            let other = sample_subset(&m, &q, seed ^ 0xDEAD_BEEF).unwrap();
            prop_assert_eq!(other.class_counts(), q.quotas);
        }

        #[test]
        fn quota_bounds(d in 1u64..100_000, f in 1e-6f64..=1.0) {
            let q = compute_quota(d, f);
            prop_assert!(q >= 1 && q <= d);
        }
    }
}
