//! Canonical dataset manifest and per-class run parameters.
//!
//! A manifest lists every training sample as a `(locator, label)` pair. Classes
//! are ordered lexicographically by name and samples lexicographically by
//! locator, so ingesting the same rows in any order yields the same manifest
//! (and the same content hash). Validation data is never part of a manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("row {row}: missing label")]
    MissingLabel { row: usize },
    #[error("row {row}: missing locator")]
    MissingLocator { row: usize },
    #[error("duplicate locator `{0}`")]
    DuplicateLocator(String),
    #[error("class `{0}` has no samples")]
    EmptyClass(String),
    #[error("a manifest needs at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("cannot read manifest source {path}: {reason}")]
    UnreadableSource { path: String, reason: String },
    #[error("bad manifest header: expected `locator,label`, found `{0}`")]
    BadHeader(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("class `{class}`: lower limit {lower} exceeds upper limit {upper}")]
    LimitOrder { class: String, lower: f64, upper: f64 },
    #[error("class `{class}`: limits must satisfy 0 < l <= u <= 1 (got l={lower}, u={upper})")]
    LimitOutOfRange { class: String, lower: f64, upper: f64 },
    #[error("class `{class}`: factor {factor} outside [{lower}, {upper}] or (0, 1]")]
    FactorOutOfRange { class: String, factor: f64, lower: f64, upper: f64 },
    #[error("class `{class}`: target offset {offset} outside [-1, 1]")]
    OffsetOutOfRange { class: String, offset: f64 },
    #[error("class `{class}`: max samples {requested} exceeds availability {available}")]
    AvailabilityExceeded { class: String, requested: u64, available: u64 },
    #[error("class `{class}`: max samples must be at least 1")]
    ZeroMaxSamples { class: String },
    #[error("no class spec for manifest class `{0}`")]
    MissingClassSpec(String),
    #[error("class spec for unknown class `{0}`")]
    UnknownClass(String),
    #[error("class `{0}` specified more than once")]
    DuplicateClassSpec(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub locator: String,
    pub class_id: usize,
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    classes: Vec<String>,
    samples: Vec<SampleRecord>,
    availability: Vec<u64>,
}

impl DatasetManifest {
    /// Builds a manifest from `(locator, label)` rows.
    ///
    /// `declared` lists classes that must exist even if no row carries them;
    /// such a class is reported as [`ManifestError::EmptyClass`].
    pub fn from_rows<I, L, C>(rows: I, declared: &[String]) -> Result<Self, ManifestError>
    where
        I: IntoIterator<Item = (L, C)>,
        L: Into<String>,
        C: Into<String>,
    {
        let mut by_locator: BTreeMap<String, String> = BTreeMap::new();
        let mut names: BTreeSet<String> = declared.iter().cloned().collect();
        for (row, (locator, label)) in rows.into_iter().enumerate() {
            let locator = locator.into();
            let label = label.into();
            if locator.trim().is_empty() {
                return Err(ManifestError::MissingLocator { row });
            }
            if label.trim().is_empty() {
                return Err(ManifestError::MissingLabel { row });
            }
            names.insert(label.clone());
            if by_locator.insert(locator.clone(), label).is_some() {
                return Err(ManifestError::DuplicateLocator(locator));
            }
        }

        let classes: Vec<String> = names.into_iter().collect();
        let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut availability = vec![0u64; classes.len()];
        let samples: Vec<SampleRecord> = by_locator
            .into_iter()
            .map(|(locator, class_name)| {
                let class_id = index[class_name.as_str()];
                availability[class_id] += 1;
                SampleRecord { locator, class_id, class_name }
            })
            .collect();

        if let Some(c) = availability.iter().position(|&a| a == 0) {
            return Err(ManifestError::EmptyClass(classes[c].clone()));
        }
        if classes.len() < 2 {
            return Err(ManifestError::TooFewClasses(classes.len()));
        }
        Ok(Self { classes, samples, availability })
    }

    /// Synthetic manifest with `count` locators `<prefix>/<class>/<index>` per class.
    pub fn synthetic(prefix: &str, classes: &[(String, u64)]) -> Result<Self, ManifestError> {
        let rows = classes
            .iter()
            .flat_map(|(name, count)| (0..*count).map(move |i| (format!("{prefix}/{name}/{i:07}"), name.clone())));
        let declared: Vec<String> = classes.iter().map(|(n, _)| n.clone()).collect();
        Self::from_rows(rows, &declared)
    }

    /// Ingests either a `locator,label` table or a `<root>/<class>/<file>` tree.
    pub fn ingest(source: &Path) -> Result<Self, ManifestError> {
        let meta = fs::metadata(source).map_err(|e| unreadable(source, e))?;
        if meta.is_dir() {
            Self::ingest_directory(source)
        } else {
            let file = fs::File::open(source).map_err(|e| unreadable(source, e))?;
            Self::read_csv(file).map_err(|e| match e {
                ManifestError::UnreadableSource { reason, .. } => {
                    ManifestError::UnreadableSource { path: source.display().to_string(), reason }
                }
                other => other,
            })
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ManifestError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
        let header = rdr.headers().map_err(csv_unreadable)?.clone();
        if header.len() < 2 || header.get(0) != Some("locator") || header.get(1) != Some("label") {
            return Err(ManifestError::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
        }
        let mut rows = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(csv_unreadable)?;
            let locator = record.get(0).unwrap_or("").to_string();
            let label = record.get(1).ok_or(ManifestError::MissingLabel { row })?.to_string();
            if label.trim().is_empty() {
                return Err(ManifestError::MissingLabel { row });
            }
            rows.push((locator, label));
        }
        Self::from_rows(rows, &[])
    }

    fn ingest_directory(root: &Path) -> Result<Self, ManifestError> {
        let mut declared = Vec::new();
        let mut rows = Vec::new();
        for class_entry in fs::read_dir(root).map_err(|e| unreadable(root, e))? {
            let class_entry = class_entry.map_err(|e| unreadable(root, e))?;
            let class_path = class_entry.path();
            if !class_path.is_dir() || is_hidden(&class_path) {
                continue;
            }
            let class_name = class_entry.file_name().to_string_lossy().into_owned();
            declared.push(class_name.clone());
            for file in fs::read_dir(&class_path).map_err(|e| unreadable(&class_path, e))? {
                let path = file.map_err(|e| unreadable(&class_path, e))?.path();
                if path.is_file() && !is_hidden(&path) {
                    rows.push((path.to_string_lossy().into_owned(), class_name.clone()));
                }
            }
        }
        Self::from_rows(rows, &declared)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    /// Per-class sample counts `D_c` as available in the manifest.
    pub fn availability(&self) -> &[u64] {
        &self.availability
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(name)).ok()
    }

    /// Canonical `locator,label` table (UTF-8, LF).
    pub fn to_csv(&self) -> Vec<u8> {
        write_table(self.samples.iter())
    }

    /// SHA-256 of the canonical table, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv()))
    }
}

pub(crate) fn write_table<'a, I: Iterator<Item = &'a SampleRecord>>(samples: I) -> Vec<u8> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    wtr.write_record(["locator", "label"]).expect("write to Vec");
    for s in samples {
        wtr.write_record([s.locator.as_str(), s.class_name.as_str()]).expect("write to Vec");
    }
    wtr.into_inner().expect("flush Vec")
}

fn is_hidden(path: &Path) -> bool {
    path.file_name().map(|n| n.to_string_lossy().starts_with('.')).unwrap_or(false)
}

fn unreadable(path: &Path, e: std::io::Error) -> ManifestError {
    ManifestError::UnreadableSource { path: path.display().to_string(), reason: e.to_string() }
}

fn csv_unreadable(e: csv::Error) -> ManifestError {
    ManifestError::UnreadableSource { path: String::from("<table>"), reason: e.to_string() }
}

/// Per-class optimizer parameters: `D_c`, start factor, limits and target offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class: String,
    /// Maximum samples `D_c` the optimizer may draw from this class.
    pub max_samples: u64,
    pub factor: f64,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub offset: f64,
}

impl ClassSpec {
    pub fn new(class: impl Into<String>, max_samples: u64) -> Self {
        Self { class: class.into(), max_samples, factor: 0.5, lower: 0.05, upper: 0.95, offset: 0.0 }
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_limits(mut self, lower: f64, upper: f64) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_factor(mut self, factor: f64) -> Self {
        self.factor = factor;
        self
    }

    fn check(&self, available: u64) -> Result<(), ConfigError> {
        let class = || self.class.clone();
        let finite = self.lower.is_finite() && self.upper.is_finite();
        if finite && self.lower > self.upper {
            return Err(ConfigError::LimitOrder { class: class(), lower: self.lower, upper: self.upper });
        }
        if !finite || self.lower <= 0.0 || self.upper > 1.0 {
            return Err(ConfigError::LimitOutOfRange { class: class(), lower: self.lower, upper: self.upper });
        }
        if !(self.factor > 0.0 && self.factor <= 1.0 && self.factor >= self.lower && self.factor <= self.upper) {
            return Err(ConfigError::FactorOutOfRange {
                class: class(),
                factor: self.factor,
                lower: self.lower,
                upper: self.upper,
            });
        }
        if !(-1.0..=1.0).contains(&self.offset) {
            return Err(ConfigError::OffsetOutOfRange { class: class(), offset: self.offset });
        }
        if self.max_samples == 0 {
            return Err(ConfigError::ZeroMaxSamples { class: class() });
        }
        if self.max_samples > available {
            return Err(ConfigError::AvailabilityExceeded { class: class(), requested: self.max_samples, available });
        }
        Ok(())
    }
}

/// Class specs checked against a manifest, ordered by manifest class id.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSpecs {
    specs: Vec<ClassSpec>,
}

impl ValidatedSpecs {
    pub fn specs(&self) -> &[ClassSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn max_samples(&self) -> Vec<u64> {
        self.specs.iter().map(|s| s.max_samples).collect()
    }

    pub fn factors(&self) -> Vec<f64> {
        self.specs.iter().map(|s| s.factor).collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.specs.iter().map(|s| s.lower).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.specs.iter().map(|s| s.upper).collect()
    }

    pub fn offsets(&self) -> Vec<f64> {
        self.specs.iter().map(|s| s.offset).collect()
    }
}

/// Checks one spec per manifest class. Out-of-range values are rejected, never repaired.
pub fn validate_config(specs: &[ClassSpec], manifest: &DatasetManifest) -> Result<ValidatedSpecs, ConfigError> {
    let mut slots: Vec<Option<ClassSpec>> = vec![None; manifest.n_classes()];
    for spec in specs {
        let id = manifest.class_id(&spec.class).ok_or_else(|| ConfigError::UnknownClass(spec.class.clone()))?;
        if slots[id].is_some() {
            return Err(ConfigError::DuplicateClassSpec(spec.class.clone()));
        }
        spec.check(manifest.availability()[id])?;
        slots[id] = Some(spec.clone());
    }
    let specs = slots
        .into_iter()
        .zip(manifest.classes())
        .map(|(slot, name)| slot.ok_or_else(|| ConfigError::MissingClassSpec(name.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ValidatedSpecs { specs })
}
