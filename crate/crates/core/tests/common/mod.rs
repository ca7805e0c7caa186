#![allow(dead_code)]

use std::path::Path;

use bicdo::config::RunConfig;
use bicdo::sampler::SampledManifest;
use bicdo::trainers::{Trainer, TrainerError, TrainerRequest, TrainerResponse};

/// Delegates to `inner` but fails once at `fail_at`.
pub struct FlakyTrainer {
    pub inner: Box<dyn Trainer>,
    pub fail_at: u64,
}

impl Trainer for FlakyTrainer {
    fn train(&mut self, sample: &SampledManifest, request: &TrainerRequest) -> Result<TrainerResponse, TrainerError> {
        if request.iteration == self.fail_at {
            return Err(TrainerError::NonZeroExit { code: Some(1), diagnostics: "injected failure".into() });
        }
        self.inner.train(sample, request)
    }
}

pub fn in_dir(mut cfg: RunConfig, dir: &Path) -> RunConfig {
    cfg.out_dir = Some(dir.to_path_buf());
    cfg
}

pub fn flaky(cfg: &RunConfig, scratch: &Path, fail_at: u64) -> Box<dyn Trainer> {
    let inner = cfg.prepare(scratch).expect("prepare").trainer;
    Box::new(FlakyTrainer { inner, fail_at })
}

pub fn history_bytes(dir: &Path) -> Vec<u8> {
    std::fs::read(dir.join(bicdo::orchestrator::store::HISTORY_FILE)).expect("history")
}

/// Drops wall-clock timings and the output directory so histories compare on content.
pub fn strip(mut h: bicdo::RunHistory) -> bicdo::RunHistory {
    h.config.out_dir = None;
    for r in &mut h.records {
        r.trainer_wall_seconds = 0.0;
    }
    h
}
