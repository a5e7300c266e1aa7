//! Run manifests.
//!
//! Every command writes exactly one `manifest.json` into its output
//! directory, recording the command, configuration, seed, and SHA-256 hashes
//! of every file it read and wrote. Two runs of the same command on the same
//! inputs produce manifests identical except for `wall_time_s`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA: &str = "attentrack.manifest";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub version: u32,
    pub command: String,
    pub config_path: Option<String>,
    pub seed: Option<u64>,
    /// Command-specific facts (stage, ablation arm identity, counts...).
    pub notes: BTreeMap<String, String>,
    /// File name -> SHA-256 of inputs the command read.
    pub inputs: BTreeMap<String, String>,
    /// File name -> SHA-256 of outputs the command wrote (not the manifest).
    pub outputs: BTreeMap<String, String>,
    /// Wall-clock duration in seconds; the one field allowed to differ
    /// between otherwise identical runs.
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, seed: Option<u64>) -> RunManifest {
        RunManifest {
            schema: MANIFEST_SCHEMA.to_string(),
            version: MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            seed,
            notes: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn note(&mut self, key: &str, value: impl Into<String>) {
        self.notes.insert(key.to_string(), value.into());
    }

    /// Hashes an input file under its file name.
    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(file_name(path), sha256_file(path)?);
        Ok(())
    }

    /// Hashes an output file under its file name.
    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(file_name(path), sha256_file(path)?);
        Ok(())
    }

    /// Stamps the wall time and writes `manifest.json` into `dir`.
    pub fn write(mut self, dir: &Path, started: Instant) -> Result<PathBuf> {
        self.wall_time_s = started.elapsed().as_secs_f64();
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(&path, text)
            .with_context(|| format!("cannot write manifest {}", path.display()))?;
        Ok(path)
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}
