//! Record of the artifacts a pipeline run produced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use imlc_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub command: String,
    pub created_unix: u64,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub entries: Vec<ManifestEntry>,
}

impl ManifestEntry {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_owned(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_owned(), value);
        self
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_owned());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.to_owned());
        self
    }
}

impl RunManifest {
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Adds `entry`, replacing an earlier entry of the same command with the
    /// same outputs, and writes the manifest. Every referenced file must exist.
    pub fn record(path: &Path, entry: ManifestEntry) -> Result<()> {
        for p in entry.inputs.iter().chain(&entry.outputs) {
            if !p.exists() {
                return Err(Error::Integrity(format!(
                    "manifest entry for `{}` references missing file {}",
                    entry.command,
                    p.display()
                )));
            }
        }
        let mut manifest = Self::load_or_default(path)?;
        manifest
            .entries
            .retain(|e| !(e.command == entry.command && e.outputs == entry.outputs));
        manifest.entries.push(entry);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })
    }
}
