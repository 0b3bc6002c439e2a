//! Dataset manifest: `{version: 1, fps, entries: [{file, subject, action, split}]}`.
//!
//! Relative file paths are resolved against the manifest's own directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_sequence_csv, PoseSequence};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: PathBuf,
    pub subject: String,
    pub action: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub fps: f64,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(fps: f64, entries: Vec<ManifestEntry>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            fps,
            entries,
            root: PathBuf::new(),
        }
    }

    /// Parses and validates a manifest. File existence is checked relative to
    /// the parent directory of `path`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::CorruptFile {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        for entry in &manifest.entries {
            let resolved = manifest.resolve(entry);
            if !resolved.is_file() {
                return Err(Error::io(
                    resolved,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "manifest entry missing"),
                ));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::VersionMismatch {
                expected: MANIFEST_VERSION,
                found: self.version,
            });
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::BadConfig(format!("fps must be positive, got {}", self.fps)));
        }
        let train: BTreeSet<&str> = self
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.action.as_str())
            .collect();
        if let Some(e) = self
            .entries
            .iter()
            .find(|e| e.split != Split::Train && !train.contains(e.action.as_str()))
        {
            return Err(Error::BadConfig(format!(
                "action {:?} in {:?} split has no training sequences",
                e.action, e.split
            )));
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.file.is_absolute() {
            entry.file.clone()
        } else {
            self.root.join(&entry.file)
        }
    }

    /// Sorted distinct action labels of the training split; the index of a
    /// label is its one-hot position.
    pub fn actions(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.action.as_str())
            .collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<PoseSequence>> {
        self.entries_in(split)
            .map(|e| Ok(read_sequence_csv(self.resolve(e), self.fps)?.with_action(&e.action)))
            .collect()
    }
}
