//! Checkpoint file: magic, manifest length (u64 LE), JSON manifest, then a
//! payload of little-endian f64 values. The manifest names every payload
//! segment with its shape and byte offset and carries the payload's SHA-256.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::SeqVaeParams;
use crate::signal::{write_atomic, NormStats};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CVSQACKP";

/// A trained model with everything needed to assess new traces.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub params: SeqVaeParams,
    /// Normalization fitted on the training traces.
    pub norm: NormStats,
    pub tau: Option<f64>,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    /// Residuals of the training windows, for refitting the two-sigma cut-off.
    pub train_residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Segment {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    train_config: TrainConfig,
    segments: Vec<Segment>,
    payload_bytes: u64,
    sha256: String,
}

fn segments_of(ckpt: &Checkpoint) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out: Vec<(String, Vec<usize>, Vec<f64>)> = ckpt
        .params
        .layout()
        .tensors
        .iter()
        .map(|t| {
            let v = ckpt.params.values()[t.offset..t.offset + t.len()].to_vec();
            (format!("params.{}", t.name), t.shape.clone(), v)
        })
        .collect();
    out.push(("norm".into(), vec![2], vec![ckpt.norm.mean, ckpt.norm.std]));
    let tau: Vec<f64> = ckpt.tau.into_iter().collect();
    out.push(("tau".into(), vec![tau.len()], tau));
    out.push(("loss_history".into(), vec![ckpt.loss_history.len()], ckpt.loss_history.clone()));
    out.push(("train_residuals".into(), vec![ckpt.train_residuals.len()], ckpt.train_residuals.clone()));
    out
}

pub fn checkpoint_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut segments = Vec::new();
    for (name, shape, values) in segments_of(ckpt) {
        segments.push(Segment {
            name,
            shape,
            offset: payload.len() as u64,
        });
        for v in values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        train_config: ckpt.train,
        segments,
        payload_bytes: payload.len() as u64,
        sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &checkpoint_bytes(ckpt)?)
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::CheckpointIntegrity(msg.into())
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(integrity("missing checkpoint header"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[16..];
    if len > body.len() as u64 {
        return Err(integrity("file is shorter than its manifest"));
    }
    let (json, payload) = body.split_at(len as usize);
    let raw: serde_json::Value =
        serde_json::from_slice(json).map_err(|e| integrity(format!("unreadable manifest: {e}")))?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| integrity("manifest has no format_version"))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::CheckpointVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: CHECKPOINT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| integrity(format!("bad manifest: {e}")))?;
    if payload.len() as u64 != manifest.payload_bytes {
        return Err(integrity(format!(
            "payload has {} bytes, manifest declares {}",
            payload.len(),
            manifest.payload_bytes
        )));
    }
    if hex::encode(Sha256::digest(payload)) != manifest.sha256 {
        return Err(integrity("payload checksum mismatch"));
    }

    let read = |name: &str| -> Result<(Vec<usize>, Vec<f64>)> {
        let seg = manifest
            .segments
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| integrity(format!("missing segment {name}")))?;
        let n: usize = seg.shape.iter().product();
        let start = usize::try_from(seg.offset).map_err(|_| integrity("offset overflow"))?;
        let end = start
            .checked_add(n * 8)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| integrity(format!("segment {name} exceeds payload")))?;
        let values = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((seg.shape.clone(), values))
    };

    let config = manifest.train_config.model;
    let mut params = SeqVaeParams::zeros(config).map_err(|e| integrity(e.to_string()))?;
    let tensors = params.layout().tensors.clone();
    if manifest.segments.iter().filter(|s| s.name.starts_with("params.")).count() != tensors.len() {
        return Err(integrity("parameter segments do not match the model configuration"));
    }
    for t in tensors {
        let (shape, values) = read(&format!("params.{}", t.name))?;
        if shape != t.shape {
            return Err(integrity(format!("tensor {} has shape {shape:?}, expected {:?}", t.name, t.shape)));
        }
        params.values_mut()[t.offset..t.offset + t.len()].copy_from_slice(&values);
    }
    let (_, norm) = read("norm")?;
    if norm.len() != 2 {
        return Err(integrity("norm segment must hold two values"));
    }
    let (_, tau) = read("tau")?;
    if tau.len() > 1 {
        return Err(integrity("tau segment holds more than one value"));
    }
    Ok(Checkpoint {
        train: manifest.train_config,
        params,
        norm: NormStats {
            mean: norm[0],
            std: norm[1],
        },
        tau: tau.first().copied(),
        loss_history: read("loss_history")?.1,
        train_residuals: read("train_residuals")?.1,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}
