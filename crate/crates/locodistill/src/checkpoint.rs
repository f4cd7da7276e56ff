//! Versioned checkpoint files: named f64 parameter arrays plus a manifest.
//!
//! Layout: magic `LDCK`, format version (u32 LE), manifest JSON (u32 length +
//! bytes), array count (u64 LE), then per array: name (u16 length + UTF-8),
//! rows (u32), cols (u32), row-major f64 LE data. Writes are atomic
//! (write-then-rename).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad magic (not a checkpoint file)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("missing array {0:?}")]
    MissingArray(String),
}

/// Provenance carried with every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// What the checkpoint holds, e.g. "amp-policy" or "diffusion-policy".
    pub kind: String,
    pub seed: u64,
    /// Hash of the resolved run configuration.
    pub config_hash: u64,
    /// Training steps consumed when the checkpoint was written.
    pub step_count: u64,
    /// Free-form scalar metadata (normalization dims, scores, ...).
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

/// A checkpoint in memory: ordered name -> array map plus the manifest.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub arrays: BTreeMap<String, Array2<f64>>,
}

impl Checkpoint {
    pub fn new(manifest: Manifest) -> Self {
        Self {
            manifest,
            arrays: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, arr: Array2<f64>) {
        self.arrays.insert(name.into(), arr);
    }

    pub fn get(&self, name: &str) -> Result<&Array2<f64>, CheckpointError> {
        self.arrays
            .get(name)
            .ok_or_else(|| CheckpointError::MissingArray(name.to_string()))
    }

    /// Atomic save: serialize to `<path>.tmp`, then rename over `path`.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(CHECKPOINT_MAGIC)?;
            w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
            let manifest = serde_json::to_vec(&self.manifest)?;
            w.write_all(&(manifest.len() as u32).to_le_bytes())?;
            w.write_all(&manifest)?;
            w.write_all(&(self.arrays.len() as u64).to_le_bytes())?;
            for (name, arr) in &self.arrays {
                let bytes = name.as_bytes();
                w.write_all(&(bytes.len() as u16).to_le_bytes())?;
                w.write_all(bytes)?;
                w.write_all(&(arr.nrows() as u32).to_le_bytes())?;
                w.write_all(&(arr.ncols() as u32).to_le_bytes())?;
                for &v in arr.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let mlen = read_u32(&mut r)? as usize;
        let mut mbytes = vec![0u8; mlen];
        r.read_exact(&mut mbytes)?;
        let manifest: Manifest = serde_json::from_slice(&mbytes)?;
        let count = read_u64(&mut r)?;
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let nlen = read_u16(&mut r)? as usize;
            let mut nbytes = vec![0u8; nlen];
            r.read_exact(&mut nbytes)?;
            let name = String::from_utf8(nbytes)
                .map_err(|_| CheckpointError::Corrupt("array name not UTF-8".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut data = vec![0.0f64; rows * cols];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            let arr = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            arrays.insert(name, arr);
        }
        Ok(Self { manifest, arrays })
    }
}

fn read_u16(r: &mut impl Read) -> Result<u16, CheckpointError> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Stable 64-bit FNV-1a hash of a serializable config, for manifests.
pub fn config_hash<T: Serialize>(cfg: &T) -> u64 {
    let bytes = serde_json::to_vec(cfg).unwrap_or_default();
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in &bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
