//! On-disk model format: a JSON manifest (`<path>.json`) naming every
//! parameter with its shape and offset, plus the raw little-endian `f64`
//! values concatenated in manifest order (`<path>.bin`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelError, ParamStore};
use crate::autodiff::Tensor;

pub const CHECKPOINT_FORMAT: &str = "semivfl-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in `f64` elements into the binary file.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub scope: String,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub kind: String,
    pub stage: String,
    pub config_hash: String,
    pub layout: serde_json::Value,
    pub stores: Vec<StoreEntry>,
    pub data_sha256: String,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn data_path(path: &Path) -> PathBuf {
    path.with_extension("bin")
}

fn io_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_checkpoint(
    path: &Path,
    kind: &str,
    stage: &str,
    config_hash: &str,
    layout: serde_json::Value,
    stores: &[(&str, &ParamStore)],
) -> Result<CheckpointManifest, ModelError> {
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(stores.len());
    let mut offset = 0;
    for (scope, store) in stores {
        let mut params = Vec::with_capacity(store.len());
        for (name, t) in store.iter() {
            params.push(ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        entries.push(StoreEntry {
            scope: scope.to_string(),
            params,
        });
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        kind: kind.into(),
        stage: stage.into(),
        config_hash: config_hash.into(),
        layout,
        stores: entries,
        data_sha256: hex::encode(Sha256::digest(&bytes)),
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    let bin = data_path(path);
    std::fs::write(&bin, &bytes).map_err(|e| io_err(&bin, e))?;
    let json = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&json, text).map_err(|e| io_err(&json, e))?;
    Ok(manifest)
}

pub fn read_checkpoint(
    path: &Path,
    expected_kind: &str,
) -> Result<(CheckpointManifest, Vec<ParamStore>), ModelError> {
    let json = manifest_path(path);
    let text = std::fs::read_to_string(&json).map_err(|e| io_err(&json, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| ModelError::Format(e.to_string()))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(ModelError::Format(format!(
            "unsupported checkpoint format `{}`",
            manifest.format
        )));
    }
    if manifest.kind != expected_kind {
        return Err(ModelError::Format(format!(
            "expected a {expected_kind} checkpoint, found {}",
            manifest.kind
        )));
    }
    let bin = data_path(path);
    let bytes = std::fs::read(&bin).map_err(|e| io_err(&bin, e))?;
    if hex::encode(Sha256::digest(&bytes)) != manifest.data_sha256 {
        return Err(ModelError::Format(format!(
            "{} does not match its manifest checksum",
            bin.display()
        )));
    }
    if bytes.len() % 8 != 0 {
        return Err(ModelError::Format("binary length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut stores = Vec::with_capacity(manifest.stores.len());
    for entry in &manifest.stores {
        let mut store = ParamStore::new();
        for p in &entry.params {
            let n: usize = p.shape.iter().product();
            let slice = values.get(p.offset..p.offset + n).ok_or_else(|| {
                ModelError::Format(format!("parameter {} runs past the data file", p.name))
            })?;
            store.add(p.name.clone(), Tensor::new(p.shape.clone(), slice.to_vec())?);
        }
        stores.push(store);
    }
    Ok((manifest, stores))
}

/// Checks that a loaded store has exactly the names and shapes of a freshly
/// constructed template and returns it.
pub(crate) fn conform(template: &ParamStore, loaded: ParamStore) -> Result<ParamStore, ModelError> {
    if template.names() != loaded.names() {
        return Err(ModelError::Format(format!(
            "parameter names differ from the model layout ({} vs {} entries)",
            loaded.len(),
            template.len()
        )));
    }
    for ((name, a), b) in template.iter().zip(loaded.values()) {
        if a.shape() != b.shape() {
            return Err(ModelError::Format(format!(
                "parameter {name}: shape {:?} in checkpoint, {:?} expected",
                b.shape(),
                a.shape()
            )));
        }
    }
    Ok(loaded)
}
