//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! magic "MTDCKPT\0" | u32 version | u64 n | n bytes JSON metadata
//! | u64 count, count f64 parameters | u64 count, f64 first moments
//! | u64 count, f64 second moments | 32-byte SHA-256 of everything before
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::runlog::RunLog;
use super::{ExperimentConfig, HarnessError};
use crate::losses::TaskWeights;
use crate::optim::AdamConfig;

const MAGIC: &[u8; 8] = b"MTDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config: ExperimentConfig,
    pub iter: usize,
    pub skipped: usize,
    pub weights: TaskWeights,
    pub adam_config: AdamConfig,
    pub adam_step: u64,
    pub slot_lengths: Vec<usize>,
    pub log: RunLog,
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

fn push_array(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(meta: &CheckpointMeta, params: &[f64], m: &[f64], v: &[f64]) -> Result<Vec<u8>, HarnessError> {
    let json = serde_json::to_vec(meta)?;
    let mut buf = Vec::with_capacity(64 + json.len() + 8 * (params.len() + m.len() + v.len()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    push_array(&mut buf, params);
    push_array(&mut buf, m);
    push_array(&mut buf, v);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HarnessError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| HarnessError::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, HarnessError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn array(&mut self) -> Result<Vec<f64>, HarnessError> {
        let n = usize::try_from(self.u64()?).map_err(|_| HarnessError::Checkpoint("array too long".into()))?;
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| HarnessError::Checkpoint("array too long".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, HarnessError> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
        return Err(HarnessError::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(HarnessError::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(HarnessError::Checkpoint("checksum mismatch".into()));
    }
    let mut cur = Cursor { bytes: body, at: 12 };
    let meta_len = usize::try_from(cur.u64()?).map_err(|_| HarnessError::Checkpoint("bad length".into()))?;
    let meta: CheckpointMeta = serde_json::from_slice(cur.take(meta_len)?)?;
    let params = cur.array()?;
    let m = cur.array()?;
    let v = cur.array()?;
    if cur.at != body.len() {
        return Err(HarnessError::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { meta, params, m, v })
}

pub fn write(path: &Path, meta: &CheckpointMeta, params: &[f64], m: &[f64], v: &[f64]) -> Result<(), HarnessError> {
    fs::write(path, encode(meta, params, m, v)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Checkpoint, HarnessError> {
    decode(&fs::read(path)?)
}
