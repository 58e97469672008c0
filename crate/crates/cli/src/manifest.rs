//! Run manifests: a JSON record written next to every command's output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use antispoof_core::Error;
use serde::{Deserialize, Serialize};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Only these fields vary between identical runs.
    pub wall_clock: WallClock,
}

/// Collects manifest fields while a command runs.
pub struct ManifestBuilder {
    command: String,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started: SystemTime,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    pub fn config(&mut self, config: impl Serialize) -> &mut Self {
        self.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
        self
    }

    pub fn input(&mut self, key: &str, path: &Path) -> &mut Self {
        self.inputs.insert(key.to_string(), path.display().to_string());
        self
    }

    pub fn output(&mut self, key: &str, path: &Path) -> &mut Self {
        self.outputs.insert(key.to_string(), path.display().to_string());
        self
    }

    pub fn finish(&self) -> RunManifest {
        RunManifest {
            manifest_version: MANIFEST_VERSION,
            command: self.command.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            wall_clock: WallClock {
                started_unix_ms: self
                    .started
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_millis()),
                elapsed_ms: self.clock.elapsed().as_millis(),
            },
        }
    }

    /// Writes the manifest atomically (temp file, then rename).
    pub fn write(&self, path: &Path) -> Result<RunManifest, Error> {
        let manifest = self.finish();
        let json = serde_json::to_string_pretty(&manifest)? + "\n";
        write_atomic(path, json.as_bytes())?;
        Ok(manifest)
    }
}

/// Manifest location for an output directory.
pub fn dir_manifest(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

/// Manifest location for a single output file: `<file>.manifest.json`.
pub fn file_manifest(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    file.with_file_name(name)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|source| Error::Io {
        path: tmp.clone(),
        source,
    })?;
    fs::rename(&tmp, path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
