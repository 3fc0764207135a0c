//! Run-state journal: stage completion markers with artifact digests.
//!
//! A stage may start only when its upstream markers are present; each
//! marker records a digest over the stage's artifacts so resumption can
//! detect tampering or bit-rot.

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub artifact_digest: String,
    pub wall_clock_seconds: f64,
    pub completed_at: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub config_digest: String,
    pub completed: BTreeMap<String, StageRecord>,
}

impl RunState {
    pub fn new(run_id: &str, config_digest: &str) -> Self {
        Self {
            run_id: run_id.to_string(),
            config_digest: config_digest.to_string(),
            completed: BTreeMap::new(),
        }
    }

    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join("state.json")
    }

    pub fn exists(run_dir: &Path) -> bool {
        Self::path(run_dir).is_file()
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(Self::path(run_dir))
            .map_err(|e| Error::stage(format!("run state unreadable: {e}")))?;
        serde_json::from_str(&text).map_err(|e| Error::stage(format!("run state invalid: {e}")))
    }

    /// Single-writer journal update: mark a stage complete and persist.
    pub fn mark(
        &mut self,
        run_dir: &Path,
        stage: &str,
        artifact_digest: String,
        wall_clock_seconds: f64,
    ) -> Result<()> {
        self.completed.insert(
            stage.to_string(),
            StageRecord {
                artifact_digest,
                wall_clock_seconds,
                completed_at: chrono::Utc::now().to_rfc3339(),
            },
        );
        self.save(run_dir)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(run_dir)?;
        let json = serde_json::to_string_pretty(self).expect("state serializes");
        std::fs::write(Self::path(run_dir), json)?;
        Ok(())
    }

    pub fn is_complete(&self, stage: &str) -> bool {
        self.completed.contains_key(stage)
    }

    /// Verify a completed stage's artifacts still hash to the recorded
    /// digest.
    pub fn verify(&self, run_dir: &Path, stage: &str, files: &[PathBuf]) -> Result<()> {
        let record = self
            .completed
            .get(stage)
            .ok_or_else(|| Error::stage(format!("stage {stage} has no completion marker")))?;
        let digest = digest_files(run_dir, files)?;
        if digest != record.artifact_digest {
            return Err(Error::stage(format!(
                "stage {stage} artifacts changed since completion (expected {}, found {digest})",
                record.artifact_digest
            )));
        }
        Ok(())
    }
}

/// Combined digest over files (paths relative to the run dir), order-fixed.
pub fn digest_files(run_dir: &Path, files: &[PathBuf]) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for rel in files {
        let path = run_dir.join(rel);
        let bytes = std::fs::read(&path)
            .map_err(|e| Error::stage(format!("artifact {} unreadable: {e}", path.display())))?;
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update(sha256_hex(&bytes).as_bytes());
    }
    Ok(hex::encode(hasher.finalize()))
}
