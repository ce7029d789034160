//! Named-tensor checkpoint file.
//!
//! ```text
//! magic    8 bytes  "OVTCKPT\0"
//! hlen     u64 LE   length of the JSON header
//! header   hlen bytes of UTF-8 JSON: {"meta": {...}, "tensors": [{name, shape, offset}]}
//! payload  little-endian f32 values; `offset` is in bytes from payload start
//! ```
//!
//! Files are written to a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Gpt, ModelConfig};
use crate::corpus::VocabId;
use crate::nn::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OVTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// One ancestor in a checkpoint's history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub phase: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab: VocabId,
    pub seed: u64,
    pub phase: String,
    pub epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    /// Ancestors, oldest first.
    #[serde(default)]
    pub lineage: Vec<LineageEntry>,
}

impl CheckpointMeta {
    pub fn new(config: ModelConfig, vocab: VocabId, seed: u64, phase: impl Into<String>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config,
            vocab,
            seed,
            phase: phase.into(),
            epoch: None,
            best_val_loss: None,
            lineage: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_model(model: &Gpt<f32>, meta: CheckpointMeta) -> Self {
        Self {
            meta,
            tensors: model
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_model(&self) -> Result<Gpt<f32>> {
        let mut by_name: BTreeMap<&str, &Tensor<f32>> = self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut m = Gpt::zeros(&self.meta.config);
        for (name, slot) in m.named_tensors_mut() {
            let t = by_name.remove(name.as_str()).ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if t.shape() != slot.shape() {
                return Err(Error::DimensionMismatch(vec![format!(
                    "{name}: {:?} vs {:?}",
                    t.shape(),
                    slot.shape()
                )]));
            }
            *slot = t.clone();
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {extra}")));
        }
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 4 * t.numel() as u64;
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.meta.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                header.meta.format_version
            )));
        }
        let payload = &bytes[16 + hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = payload
                .get(start..start + 4 * n)
                .ok_or_else(|| Error::Format(format!("payload too short for {}", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push((e.name, Tensor::new(&e.shape, data)?));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    /// Hex SHA-256 of the serialized file.
    pub fn sha256(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }

    /// Write atomically; returns the file's SHA-256.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Lineage for a checkpoint derived from this one.
    pub fn child_lineage(&self) -> Result<Vec<LineageEntry>> {
        let mut l = self.meta.lineage.clone();
        l.push(LineageEntry {
            phase: self.meta.phase.clone(),
            sha256: self.sha256()?,
        });
        Ok(l)
    }
}
