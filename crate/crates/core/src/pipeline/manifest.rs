use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::record::{AssetRecord, Origin};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One manifest line: a summary of a completed record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub schema_version: u32,
    pub id: String,
    /// Record directory, relative to the manifest.
    pub dir: PathBuf,
    pub origin: Origin,
    pub prompt: String,
    pub consistency: Option<f64>,
}

impl ManifestEntry {
    pub fn from_record(record: &AssetRecord) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            id: record.id.clone(),
            dir: PathBuf::from(&record.id),
            origin: record.origin,
            prompt: record.prompt.raw.clone(),
            consistency: record.stats.map(|s| s.consistency_aligned),
        }
    }
}

/// Parsed contents of a line-delimited JSON manifest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub records: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn empty() -> Self {
        Self { schema_version: SCHEMA_VERSION, records: Vec::new() }
    }

    /// A missing file reads as an empty manifest.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::empty());
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut ids = BTreeSet::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: ManifestEntry =
                serde_json::from_str(line).map_err(|e| Error::invalid(format!("manifest line {}: {e}", n + 1)))?;
            if entry.schema_version != SCHEMA_VERSION {
                return Err(Error::invalid(format!(
                    "manifest line {}: schema_version {} (expected {SCHEMA_VERSION})",
                    n + 1,
                    entry.schema_version
                )));
            }
            if !ids.insert(entry.id.clone()) {
                return Err(Error::invalid(format!("manifest line {}: duplicate id {}", n + 1, entry.id)));
            }
            records.push(entry);
        }
        Ok(Self { schema_version: SCHEMA_VERSION, records })
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.iter().any(|r| r.id == id)
    }
}

/// Serializes appends to the manifest file; existing ids are never re-added.
pub struct ManifestWriter {
    path: PathBuf,
    lock: Mutex<()>,
}

impl ManifestWriter {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), lock: Mutex::new(()) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Returns `false` if the id was already present.
    pub fn append(&self, entry: &ManifestEntry) -> Result<bool> {
        let _guard = self.lock.lock().expect("manifest lock");
        if DatasetManifest::load(&self.path)?.contains(&entry.id) {
            return Ok(false);
        }
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(true)
    }
}
