//! Checkpoint files: a JSON manifest next to a raw little-endian `f64` payload.
//!
//! ```text
//! <name>.json   {"version": 1, "dtype": "f64", "payload": "<name>.bin",
//!                "num_params": N, "slots": [...], "meta": {...}}
//! <name>.bin    N × 8 bytes, slot after slot in manifest order
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::params::{ParamLayout, ParameterVector, SlotInfo};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed checkpoint manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("unsupported payload dtype {0:?}")]
    Dtype(String),
    #[error("payload holds {found} bytes, manifest expects {expected}")]
    PayloadLength { expected: usize, found: usize },
    #[error("architecture mismatch: {0}")]
    Architecture(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dtype: String,
    pub payload: String,
    pub num_params: usize,
    pub slots: Vec<SlotInfo>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Manifest {
    /// Checks that the stored slots match `layout` name-for-name and shape-for-shape.
    pub fn check_layout(&self, layout: &ParamLayout) -> Result<(), CheckpointError> {
        if self.slots.len() != layout.slots().len() {
            return Err(CheckpointError::Architecture(format!(
                "checkpoint has {} slots, model has {}",
                self.slots.len(),
                layout.slots().len()
            )));
        }
        for (stored, expected) in self.slots.iter().zip(layout.slots()) {
            if stored != expected {
                return Err(CheckpointError::Architecture(format!(
                    "slot {} {:?} does not match model slot {} {:?}",
                    stored.name, stored.shape, expected.name, expected.shape
                )));
            }
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Manifest path for a checkpoint stem (`dir/name` → `dir/name.json`).
pub fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn save<T: Scalar>(
    stem: &Path,
    params: &ParameterVector<T>,
    meta: serde_json::Value,
) -> Result<PathBuf, CheckpointError> {
    let payload_path = stem.with_extension("bin");
    let manifest_path = manifest_path(stem);
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for &v in params.as_slice() {
        bytes.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    fs::write(&payload_path, bytes).map_err(io_err(&payload_path))?;

    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        dtype: "f64".into(),
        payload: payload_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        num_params: params.len(),
        slots: params.layout().slots().to_vec(),
        meta,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CheckpointError> {
    let path = if path.extension().is_some_and(|e| e == "json") {
        path.to_path_buf()
    } else {
        manifest_path(path)
    };
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| CheckpointError::Manifest {
            path: path.clone(),
            source,
        })?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: manifest.version,
        });
    }
    if manifest.dtype != "f64" {
        return Err(CheckpointError::Dtype(manifest.dtype));
    }
    Ok(manifest)
}

/// Loads a checkpoint into `layout`, rejecting any architecture mismatch.
pub fn load<T: Scalar>(
    path: &Path,
    layout: Arc<ParamLayout>,
) -> Result<(ParameterVector<T>, Manifest), CheckpointError> {
    let manifest_file = if path.extension().is_some_and(|e| e == "json") {
        path.to_path_buf()
    } else {
        manifest_path(path)
    };
    let manifest = read_manifest(&manifest_file)?;
    manifest.check_layout(&layout)?;
    let payload_path = manifest_file.with_file_name(&manifest.payload);
    let bytes = fs::read(&payload_path).map_err(io_err(&payload_path))?;
    let expected = layout.total() * 8;
    if bytes.len() != expected || manifest.num_params != layout.total() {
        return Err(CheckpointError::PayloadLength {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect();
    let params = ParameterVector::from_vec(layout, data)
        .map_err(|e| CheckpointError::Architecture(e.to_string()))?;
    Ok((params, manifest))
}
