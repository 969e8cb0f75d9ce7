//! Run manifests: enough provenance to re-run any artifact-producing
//! command bit-identically (fixed seed and thread count); timestamps are
//! informational only.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub resolved_config: BTreeMap<String, String>,
    pub input_hashes: BTreeMap<String, String>,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

/// Collects manifest fields over a run, then writes `manifest.json`.
pub struct ManifestBuilder {
    command: String,
    resolved_config: BTreeMap<String, String>,
    input_hashes: BTreeMap<String, String>,
    seed: u64,
    started_at: chrono::DateTime<chrono::Utc>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            resolved_config: BTreeMap::new(),
            input_hashes: BTreeMap::new(),
            seed,
            started_at: chrono::Utc::now(),
            outputs: Vec::new(),
        }
    }

    pub fn config(&mut self, resolved: BTreeMap<String, String>) -> &mut Self {
        self.resolved_config.extend(resolved);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.input_hashes
            .insert(path.display().to_string(), file_sha256(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Write `manifest.json` under `out_dir` and return its path.
    pub fn write(self, out_dir: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            resolved_config: self.resolved_config,
            input_hashes: self.input_hashes,
            seed: self.seed,
            started_at: self.started_at.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
        };
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(path)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing input {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}
