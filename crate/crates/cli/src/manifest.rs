use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT: &str = "semivfl-run/1";

/// One file written by a run. Files carrying wall-clock times have no
/// checksum since they cannot replay bitwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub argv: Vec<String>,
    pub cwd: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<Artifact>,
    pub timestamp: u64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects inputs and outputs while a command runs.
pub struct RunRecorder {
    manifest: RunManifest,
    out_dir: PathBuf,
}

impl RunRecorder {
    pub fn new(command: &str, argv: Vec<String>, out_dir: &Path, seed: u64, config: serde_json::Value) -> Self {
        let cwd = std::env::current_dir()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        Self {
            manifest: RunManifest {
                format: MANIFEST_FORMAT.into(),
                command: command.into(),
                argv,
                cwd,
                seed,
                config,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            },
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.manifest.inputs.insert(name.into(), path.display().to_string());
    }

    /// Registers a deterministic output and its checksum.
    pub fn output(&mut self, path: &Path) -> Result<()> {
        let sha = sha256_file(path)?;
        self.manifest.outputs.push(Artifact {
            path: path.display().to_string(),
            sha256: Some(sha),
        });
        Ok(())
    }

    /// Registers an output that embeds timings.
    pub fn timed_output(&mut self, path: &Path) {
        self.manifest.outputs.push(Artifact {
            path: path.display().to_string(),
            sha256: None,
        });
    }

    pub fn finish(self) -> Result<PathBuf> {
        let path = self.out_dir.join(format!("{}.manifest.json", self.manifest.command));
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        anyhow::ensure!(m.format == MANIFEST_FORMAT, "unsupported manifest format `{}`", m.format);
        Ok(m)
    }
}
