//! Annotation cache keyed by image content hash.
//!
//! Each entry is `<root>/<hash>/<kind>.f32` (little-endian `f32`, row-major)
//! next to a `<kind>.json` sidecar naming kind, shape and extractor version.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::ControlKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntryMeta {
    pub kind: ControlKind,
    pub shape: [usize; 3],
    pub extractor_version: String,
    pub dtype: String,
}

#[derive(Debug, Clone)]
pub struct AnnotationCache {
    root: PathBuf,
}

impl AnnotationCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn paths(&self, hash: &str, kind: ControlKind) -> (PathBuf, PathBuf) {
        let dir = self.root.join(hash);
        (
            dir.join(format!("{kind}.f32")),
            dir.join(format!("{kind}.json")),
        )
    }

    /// `None` when absent or written by a different extractor version.
    pub fn get(&self, hash: &str, kind: ControlKind, version: &str) -> Result<Option<Array3<f64>>> {
        let (data_path, meta_path) = self.paths(hash, kind);
        if !meta_path.exists() || !data_path.exists() {
            return Ok(None);
        }
        let meta: CacheEntryMeta = serde_json::from_slice(&fs::read(&meta_path)?)?;
        if meta.extractor_version != version || meta.kind != kind {
            return Ok(None);
        }
        let bytes = fs::read(&data_path)?;
        let count: usize = meta.shape.iter().product();
        if bytes.len() != count * 4 {
            return Err(Error::CorruptFile {
                path: data_path,
                message: format!("expected {} bytes, found {}", count * 4, bytes.len()),
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        let array = Array3::from_shape_vec(meta.shape, values).map_err(|e| Error::CorruptFile {
            path: data_path,
            message: e.to_string(),
        })?;
        Ok(Some(array))
    }

    pub fn put(&self, hash: &str, kind: ControlKind, version: &str, tensor: &Array3<f64>) -> Result<()> {
        let (data_path, meta_path) = self.paths(hash, kind);
        fs::create_dir_all(data_path.parent().expect("entry has a parent"))?;
        let mut bytes = Vec::with_capacity(tensor.len() * 4);
        for v in tensor.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let (c, h, w) = tensor.dim();
        let meta = CacheEntryMeta {
            kind,
            shape: [c, h, w],
            extractor_version: version.to_owned(),
            dtype: "f32le".to_owned(),
        };
        write_atomic(&data_path, &bytes)?;
        write_atomic(&meta_path, &serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
