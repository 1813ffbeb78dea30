use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::Settings;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to re-run a command: the full resolved configuration,
/// the seeds and dataset it used, and what it wrote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub config: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
}

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, settings: &Settings, dataset: String, seeds: Vec<u64>, started_unix: u64) -> Self {
        Self {
            command: command.to_string(),
            version: code_version(),
            dataset,
            seeds,
            config: settings.to_map(),
            started_unix,
            finished_unix: started_unix,
            outputs: Vec::new(),
        }
    }

    pub fn settings(&self) -> Result<Settings> {
        Settings::from_map(&self.config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        self.finished_unix = unix_now().max(self.started_unix);
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))
    }
}

/// Reads either a flat config file or a manifest (detected by a leading `{`).
/// A manifest must have been written by `command`.
pub fn load_settings(path: impl AsRef<Path>, command: &str) -> Result<Settings> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('{') {
        let manifest = RunManifest::from_json(&text)?;
        if manifest.command != command {
            return Err(Error::Contract(format!(
                "manifest {} records a `{}` run, not `{command}`",
                path.display(),
                manifest.command
            )));
        }
        manifest.settings()
    } else {
        Settings::from_file_text(&text)
    }
}
