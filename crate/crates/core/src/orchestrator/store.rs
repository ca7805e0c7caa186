//! On-disk run state.
//!
//! ```text
//! <out>/run.json                  index: config snapshot, manifest hash, status, record files
//! <out>/manifest.csv              canonical copy of the manifest the run used
//! <out>/checkpoints/iter_NNNNN.json   one document per finished iteration
//! <out>/history.json              full history, rewritten after every iteration
//! <out>/timings.csv               trainer wall time per iteration
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Fallback, IterationRecord, RunError, RunHistory, RunStatus};
use crate::config::RunConfig;
use crate::trainers::protocol::to_json;

pub const INDEX_FILE: &str = "run.json";
pub const HISTORY_FILE: &str = "history.json";
pub const MANIFEST_COPY: &str = "manifest.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct RunIndex {
    format_version: u32,
    config: RunConfig,
    manifest_hash: String,
    classes: Vec<String>,
    status: Option<RunStatus>,
    abort_reason: Option<String>,
    fallback: Option<Fallback>,
    records: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDocument {
    record: IterationRecord,
    trainer_wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunStore {
    dir: PathBuf,
}

impl RunStore {
    pub fn open(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn exists(&self) -> bool {
        self.dir.join(INDEX_FILE).is_file()
    }

    pub fn init(&self, manifest_csv: &[u8]) -> Result<(), RunError> {
        fs::create_dir_all(self.dir.join(CHECKPOINT_DIR))?;
        write_atomic(&self.dir.join(MANIFEST_COPY), manifest_csv)?;
        Ok(())
    }

    fn record_name(iteration: u64) -> String {
        format!("{CHECKPOINT_DIR}/iter_{iteration:05}.json")
    }

    pub fn write_record(&self, record: &IterationRecord) -> Result<(), RunError> {
        let doc = CheckpointDocument { record: record.clone(), trainer_wall_seconds: record.trainer_wall_seconds };
        write_atomic(&self.dir.join(Self::record_name(record.iteration)), &to_json(&doc))
    }

    /// Rewrites index, history and timings from `history`.
    pub fn sync(&self, history: &RunHistory) -> Result<(), RunError> {
        let index = RunIndex {
            format_version: FORMAT_VERSION,
            config: history.config.clone(),
            manifest_hash: history.manifest_hash.clone(),
            classes: history.classes.clone(),
            status: history.status,
            abort_reason: history.abort_reason.clone(),
            fallback: history.fallback.clone(),
            records: history.records.iter().map(|r| Self::record_name(r.iteration)).collect(),
        };
        write_atomic(&self.dir.join(INDEX_FILE), &to_json(&index))?;
        write_atomic(&self.dir.join(HISTORY_FILE), &to_json(history))?;

        let mut timings = String::from("iteration,trainer_wall_seconds\n");
        for r in &history.records {
            timings.push_str(&format!("{},{}\n", r.iteration, r.trainer_wall_seconds));
        }
        write_atomic(&self.dir.join(TIMINGS_FILE), timings.as_bytes())
    }

    /// Rebuilds the history from the index and per-iteration checkpoints.
    pub fn load(&self) -> Result<RunHistory, RunError> {
        let index_path = self.dir.join(INDEX_FILE);
        let bytes =
            fs::read(&index_path).map_err(|e| RunError::CorruptCheckpoint(format!("{}: {e}", index_path.display())))?;
        let index: RunIndex = serde_json::from_slice(&bytes)
            .map_err(|e| RunError::CorruptCheckpoint(format!("{}: {e}", index_path.display())))?;
        if index.format_version != FORMAT_VERSION {
            return Err(RunError::CorruptCheckpoint(format!("unsupported format version {}", index.format_version)));
        }
        let mut records = Vec::with_capacity(index.records.len());
        for (expected, name) in index.records.iter().enumerate() {
            let path = self.dir.join(name);
            let bytes = fs::read(&path).map_err(|e| RunError::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
            let doc: CheckpointDocument = serde_json::from_slice(&bytes)
                .map_err(|e| RunError::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
            if doc.record.iteration != expected as u64 || doc.record.factors.len() != index.classes.len() {
                return Err(RunError::CorruptCheckpoint(format!("{} does not continue the run", path.display())));
            }
            let mut record = doc.record;
            record.trainer_wall_seconds = doc.trainer_wall_seconds;
            records.push(record);
        }
        let mut config = index.config;
        config.out_dir = Some(self.dir.clone());
        Ok(RunHistory {
            config,
            manifest_hash: index.manifest_hash,
            classes: index.classes,
            records,
            status: index.status,
            abort_reason: index.abort_reason,
            fallback: index.fallback,
        })
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
