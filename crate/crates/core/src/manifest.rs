//! Run manifest: the machine-readable record of a training run.
//!
//! Snapshots the config, logs stage timings, and records every artifact and
//! checkpoint with a content hash so a run can be audited and replayed. The
//! stage timing values are the only non-deterministic bytes the pipeline
//! produces.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.yml";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub started: String,
    pub ended: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Path relative to the run root.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub seed: u64,
    /// Full contents of the config the run was launched with.
    pub config: String,
    pub complete: bool,
    pub stages: Vec<StageRecord>,
    pub checkpoints: Vec<ArtifactRecord>,
    pub artifacts: Vec<ArtifactRecord>,
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{:02x}", b)).collect())
}

impl RunManifest {
    pub fn new(seed: u64, config_snapshot: String) -> Self {
        RunManifest {
            format_version: 1,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: config_snapshot,
            complete: false,
            stages: Vec::new(),
            checkpoints: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn stage_start(&mut self, name: &str) {
        self.stages.push(StageRecord {
            name: name.to_string(),
            started: now_rfc3339(),
            ended: String::new(),
        });
    }

    pub fn stage_end(&mut self, name: &str) {
        if let Some(record) = self.stages.iter_mut().rev().find(|s| s.name == name) {
            record.ended = now_rfc3339();
        }
    }

    /// Record a checkpoint file; `root` is the run root the stored path is
    /// made relative to.
    pub fn record_checkpoint(&mut self, root: &Path, path: &Path) -> Result<()> {
        let record = ArtifactRecord {
            path: relative_to(root, path),
            sha256: sha256_file(path)?,
        };
        self.checkpoints.push(record);
        Ok(())
    }

    pub fn record_artifact(&mut self, root: &Path, path: &Path) -> Result<()> {
        let record = ArtifactRecord {
            path: relative_to(root, path),
            sha256: sha256_file(path)?,
        };
        self.artifacts.push(record);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_yaml::to_string(self).map_err(|e| Error::Yaml {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_yaml::from_str(&text).map_err(|e| Error::Yaml {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Check that every recorded artifact exists under `root` and still
    /// matches its recorded hash.
    pub fn verify(&self, root: &Path) -> Result<()> {
        if !self.complete {
            return Err(Error::Manifest(
                "manifest marks the run incomplete; retrain before predicting".into(),
            ));
        }
        for record in self.artifacts.iter().chain(&self.checkpoints) {
            let path = root.join(&record.path);
            if !path.exists() {
                return Err(Error::Manifest(format!(
                    "artifact '{}' referenced by the manifest is missing",
                    record.path
                )));
            }
            let actual = sha256_file(&path)?;
            if actual != record.sha256 {
                return Err(Error::Manifest(format!(
                    "hash mismatch for '{}': expected {}, found {}",
                    record.path, record.sha256, actual
                )));
            }
        }
        Ok(())
    }

    pub fn references(&self, rel_path: &str) -> bool {
        self.artifacts
            .iter()
            .chain(&self.checkpoints)
            .any(|a| a.path == rel_path)
    }
}

fn relative_to(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}
