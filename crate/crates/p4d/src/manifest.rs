//! Run manifests: every command records what it ran, with what config and
//! seeds, on which inputs, and what it produced — each artifact listed with
//! its content hash. The manifest's own identity hash names the run-scoped
//! output directory, so identical inputs land in (and reproduce) the same
//! place.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::nnkit::checkpoint::file_hash;
use crate::{P4dError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand plus flags, as invoked.
    pub command: Vec<String>,
    /// Flat key-value snapshot of the resolved experiment config.
    pub config: Vec<(String, String)>,
    pub master_seed: u64,
    /// Extra per-stage seeds, when a command fans out beyond the master.
    pub seeds: BTreeMap<String, u64>,
    pub source_revision: String,
    /// Input files by role, with content hash.
    pub inputs: BTreeMap<String, ArtifactRef>,
    /// Output files by role, with content hash; filled as the run produces
    /// them.
    pub outputs: BTreeMap<String, ArtifactRef>,
    pub float_mode: String,
    /// Wall-clock timings per stage, seconds.
    pub timings: BTreeMap<String, f64>,
    /// `ok`, or `failed: <reason>` when the run aborted after cleanup.
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    pub fn new(command: &[String], config: &ExperimentConfig, master_seed: u64) -> Self {
        Self {
            command: command.to_vec(),
            config: config.snapshot(),
            master_seed,
            seeds: BTreeMap::new(),
            source_revision: source_revision(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            float_mode: "f64".to_string(),
            timings: BTreeMap::new(),
            status: "ok".to_string(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let sha256 = file_hash(path)?;
        self.inputs.insert(role.to_string(), ArtifactRef { path: path.display().to_string(), sha256 });
        Ok(())
    }

    pub fn add_output(&mut self, role: &str, path: &Path) -> Result<()> {
        let sha256 = file_hash(path)?;
        self.outputs.insert(role.to_string(), ArtifactRef { path: path.display().to_string(), sha256 });
        Ok(())
    }

    /// Time a stage and record its wall-clock duration.
    pub fn time_stage<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.timings.insert(stage.to_string(), start.elapsed().as_secs_f64());
        Ok(out)
    }

    /// Identity hash over everything that determines the run's outputs:
    /// command, config snapshot, seeds, input hashes, and float mode —
    /// deliberately not outputs or timings, which the run itself produces.
    pub fn identity_hash(&self) -> String {
        let mut h = Sha256::new();
        for part in &self.command {
            h.update(part.as_bytes());
            h.update([0]);
        }
        for (k, v) in &self.config {
            h.update(k.as_bytes());
            h.update([1]);
            h.update(v.as_bytes());
            h.update([0]);
        }
        h.update(self.master_seed.to_le_bytes());
        for (k, v) in &self.seeds {
            h.update(k.as_bytes());
            h.update(v.to_le_bytes());
        }
        for (role, a) in &self.inputs {
            h.update(role.as_bytes());
            h.update([1]);
            h.update(a.sha256.as_bytes());
        }
        h.update(self.float_mode.as_bytes());
        hex::encode(h.finalize())
    }

    /// Run-scoped output directory under `root`, named by identity hash.
    pub fn run_dir(&self, root: &Path) -> PathBuf {
        root.join(format!("run-{}", &self.identity_hash()[..16]))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            P4dError::MissingPrerequisite(format!("run manifest {}: {e}", path.display()))
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Check that every recorded output file still exists with the recorded
    /// content hash.
    pub fn verify_outputs(&self) -> Result<()> {
        for (role, a) in &self.outputs {
            let now = file_hash(Path::new(&a.path))
                .map_err(|_| P4dError::MissingPrerequisite(format!("output `{role}` at {} is gone", a.path)))?;
            if now != a.sha256 {
                return Err(P4dError::Checkpoint(format!(
                    "output `{role}` at {} changed since the run (hash mismatch)",
                    a.path
                )));
            }
        }
        Ok(())
    }
}

/// Best-effort source tag; falls back to the crate version when the build
/// is not from a git checkout.
fn source_revision() -> String {
    option_env!("GIT_REV").map(str::to_string).unwrap_or_else(|| {
        format!("p4d-{}", env!("CARGO_PKG_VERSION"))
    })
}
