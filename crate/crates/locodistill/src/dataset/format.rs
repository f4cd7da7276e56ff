//! The transition dataset file format.
//!
//! Little-endian binary: magic `LDDS`, version (u32), obs_dim (u32), act_dim
//! (u32), count (u64); then `count` rows, each `obs_dim + act_dim` f32 values
//! (observation, then action) followed by episode id and step index as u32.
//! The manifest travels as a JSON sidecar next to the payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::randomize::{RangeProfile, SetupId};

pub const DATASET_MAGIC: &[u8; 4] = b"LDDS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad magic (not a transition dataset)")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    BadVersion(u32),
    #[error("file truncated at byte offset {offset} (expected {expected} more bytes)")]
    Truncated { offset: u64, expected: u64 },
    #[error("dimension mismatch: file has obs {file_obs}/act {file_act}, expected obs {want_obs}/act {want_act}")]
    DimMismatch {
        file_obs: usize,
        file_act: usize,
        want_obs: usize,
        want_act: usize,
    },
    #[error("manifest count {manifest} does not match payload count {payload}")]
    CountMismatch { manifest: u64, payload: u64 },
    #[error("record dims inconsistent with header")]
    RaggedRecord,
    #[error("empty dataset")]
    Empty,
}

/// One expert transition: what the actor saw and what it did.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub obs: Vec<f32>,
    pub action: Vec<f32>,
    pub episode_id: u32,
    pub step_index: u32,
}

/// Provenance and normalization statistics for a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub count: u64,
    pub setup_id: SetupId,
    pub profile: RangeProfile,
    /// FNV-1a hash of the expert checkpoint bytes.
    pub expert_hash: u64,
    pub seed: u64,
    /// Unix seconds at creation.
    pub created_at: u64,
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub act_mean: Vec<f64>,
    pub act_std: Vec<f64>,
}

/// Sidecar path: `<file>.manifest.json` next to the payload.
pub fn manifest_path(data_path: &Path) -> PathBuf {
    let mut name = data_path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    data_path.with_file_name(name)
}

fn row_bytes(obs_dim: usize, act_dim: usize) -> u64 {
    4 * (obs_dim + act_dim + 2) as u64
}

/// Write payload + manifest sidecar. Payload writes are atomic
/// (write-then-rename) and byte-deterministic.
pub fn write_dataset(
    records: &[TransitionRecord],
    manifest: &DatasetManifest,
    path: &Path,
) -> Result<(), DatasetError> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(manifest.obs_dim as u32).to_le_bytes())?;
        w.write_all(&(manifest.act_dim as u32).to_le_bytes())?;
        w.write_all(&(records.len() as u64).to_le_bytes())?;
        for r in records {
            if r.obs.len() != manifest.obs_dim || r.action.len() != manifest.act_dim {
                return Err(DatasetError::RaggedRecord);
            }
            for &v in r.obs.iter().chain(r.action.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&r.episode_id.to_le_bytes())?;
            w.write_all(&r.step_index.to_le_bytes())?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    let mut manifest = manifest.clone();
    manifest.count = records.len() as u64;
    std::fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// Streaming reader over a dataset payload.
pub struct DatasetReader {
    r: BufReader<File>,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub count: u64,
    read_so_far: u64,
    byte_pos: u64,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(DatasetError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != DATASET_VERSION {
            return Err(DatasetError::BadVersion(version));
        }
        let obs_dim = read_u32(&mut r)? as usize;
        let act_dim = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)?;
        Ok(Self {
            r,
            obs_dim,
            act_dim,
            count,
            read_so_far: 0,
            byte_pos: 24,
        })
    }

    pub fn remaining(&self) -> u64 {
        self.count - self.read_so_far
    }

    /// Read up to `n` records; fewer only at end-of-payload.
    pub fn next_batch(&mut self, n: usize) -> Result<Vec<TransitionRecord>, DatasetError> {
        let take = (self.remaining()).min(n as u64) as usize;
        let mut out = Vec::with_capacity(take);
        let rb = row_bytes(self.obs_dim, self.act_dim) as usize;
        let mut buf = vec![0u8; rb];
        for _ in 0..take {
            if let Err(e) = self.r.read_exact(&mut buf) {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    let expected = row_bytes(self.obs_dim, self.act_dim)
                        * (self.count - self.read_so_far);
                    return Err(DatasetError::Truncated {
                        offset: self.byte_pos,
                        expected,
                    });
                }
                return Err(e.into());
            }
            let mut obs = Vec::with_capacity(self.obs_dim);
            let mut action = Vec::with_capacity(self.act_dim);
            let mut off = 0;
            for _ in 0..self.obs_dim {
                obs.push(f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()));
                off += 4;
            }
            for _ in 0..self.act_dim {
                action.push(f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()));
                off += 4;
            }
            let episode_id = u32::from_le_bytes(buf[off..off + 4].try_into().unwrap());
            let step_index = u32::from_le_bytes(buf[off + 4..off + 8].try_into().unwrap());
            out.push(TransitionRecord {
                obs,
                action,
                episode_id,
                step_index,
            });
            self.read_so_far += 1;
            self.byte_pos += rb as u64;
        }
        Ok(out)
    }
}

/// Load a full dataset and its manifest, verifying the count invariant.
pub fn read_dataset(path: &Path) -> Result<(Vec<TransitionRecord>, DatasetManifest), DatasetError> {
    let mut reader = DatasetReader::open(path)?;
    let mut records = Vec::with_capacity(reader.count as usize);
    loop {
        let batch = reader.next_batch(8192)?;
        if batch.is_empty() {
            break;
        }
        records.extend(batch);
    }
    let manifest: DatasetManifest =
        serde_json::from_slice(&std::fs::read(manifest_path(path))?)?;
    if manifest.count != records.len() as u64 {
        return Err(DatasetError::CountMismatch {
            manifest: manifest.count,
            payload: records.len() as u64,
        });
    }
    if manifest.obs_dim != reader.obs_dim || manifest.act_dim != reader.act_dim {
        return Err(DatasetError::DimMismatch {
            file_obs: reader.obs_dim,
            file_act: reader.act_dim,
            want_obs: manifest.obs_dim,
            want_act: manifest.act_dim,
        });
    }
    Ok((records, manifest))
}

fn read_u32(r: &mut impl Read) -> Result<u32, DatasetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, DatasetError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
