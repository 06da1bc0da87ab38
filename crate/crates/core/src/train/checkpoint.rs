//! Binary checkpoints: the 8-byte magic `LSFDCKP1`, a little-endian u64
//! header length, a JSON header, then raw little-endian f64 payloads in
//! directory order. Payload offsets are relative to the end of the header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::{PlanSpec, RegressorSpec};
use crate::error::{Error, Result};
use crate::models::{build_model, Model, ModelConfig};
use crate::tensor::{Shape, Tensor};

use super::config::TrainConfig;

pub const MAGIC: &[u8; 8] = b"LSFDCKP1";
pub const FORMAT_VERSION: u32 = 1;

/// Training position and the settings needed to continue from it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Completed optimiser steps.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    /// Seed of the batch streams.
    pub seed: u64,
    #[serde(default)]
    pub plan: Option<PlanSpec>,
    #[serde(default)]
    pub regressors: Vec<RegressorSpec>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    /// ADAM step counts, model first then each regressor.
    #[serde(default)]
    pub adam_steps: Vec<u64>,
    #[serde(default)]
    pub val_psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub offset: u64,
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: ModelConfig,
    pub meta: CheckpointMeta,
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointHeader {
    /// Offsets start at 0, follow each other without gaps or overlap and
    /// lengths match shapes.
    pub fn validate_directory(&self) -> Result<()> {
        let mut expected = 0u64;
        for e in &self.tensors {
            let numel: usize = e.shape.iter().product();
            if e.len != numel as u64 * 8 {
                return Err(Error::Checkpoint {
                    offset: 16,
                    reason: format!("tensor {} has length {} for shape {:?}", e.name, e.len, e.shape),
                });
            }
            if e.offset != expected {
                return Err(Error::Checkpoint {
                    offset: 16,
                    reason: format!("tensor {} at offset {} (expected {expected})", e.name, e.offset),
                });
            }
            expected += e.len;
        }
        Ok(())
    }

    pub fn payload_len(&self) -> u64 {
        self.tensors.iter().map(|e| e.len).sum()
    }
}

/// Model architecture plus named tensors (parameters, regressors, optimiser moments).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
}

pub const MODEL_PREFIX: &str = "model/";

impl Checkpoint {
    /// Parameters only.
    pub fn from_model(model: &Model) -> Self {
        Checkpoint {
            model: model.config().clone(),
            meta: CheckpointMeta::default(),
            tensors: model
                .params
                .iter()
                .map(|p| (format!("{MODEL_PREFIX}{}", p.name), p.value.clone()))
                .collect(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Tensors whose names start with `prefix`, prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor)> + 'a {
        self.tensors
            .iter()
            .filter_map(move |(n, t)| n.strip_prefix(prefix).map(|rest| (rest, t)))
    }

    /// Rebuilds the network and loads its parameters.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = build_model(&self.model)?;
        load_params(&mut model.params, self, MODEL_PREFIX)?;
        Ok(model)
    }

    pub fn header(&self) -> CheckpointHeader {
        let mut offset = 0u64;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let len = t.numel() as u64 * 8;
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().dims(),
                    offset,
                    len,
                };
                offset += len;
                e
            })
            .collect();
        CheckpointHeader {
            version: FORMAT_VERSION,
            model: self.model.clone(),
            meta: self.meta.clone(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.numel() * 8).sum();
        let mut out = Vec::with_capacity(16 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, start) = read_header(bytes)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let begin = start + e.offset as usize;
            let end = begin + e.len as usize;
            if end > bytes.len() {
                return Err(Error::Checkpoint {
                    offset: bytes.len() as u64,
                    reason: format!("file truncated inside tensor {} (needs {end} bytes)", e.name),
                });
            }
            let data = bytes[begin..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((e.name.clone(), Tensor::from_vec(Shape::from(e.shape), data)?));
        }
        let expected = start as u64 + header.payload_len();
        if (bytes.len() as u64) > expected {
            return Err(Error::Checkpoint {
                offset: expected,
                reason: format!("{} trailing bytes after the last tensor", bytes.len() as u64 - expected),
            });
        }
        Ok(Checkpoint {
            model: header.model,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Parses and validates the header; returns it with the payload start.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint {
            offset: 0,
            reason: "bad magic (not a checkpoint)".into(),
        });
    }
    if bytes.len() < 16 {
        return Err(Error::Checkpoint {
            offset: 8,
            reason: "file truncated inside header length".into(),
        });
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = 16u64
        .checked_add(len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or(Error::Checkpoint {
            offset: 16,
            reason: format!("header of {len} bytes exceeds file size {}", bytes.len()),
        })? as usize;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..end]).map_err(|e| Error::Checkpoint {
        offset: 16 + e.column().saturating_sub(1) as u64,
        reason: format!("malformed header: {e}"),
    })?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Checkpoint {
            offset: 16,
            reason: format!("format version {} (supported: {FORMAT_VERSION})", header.version),
        });
    }
    header.validate_directory()?;
    Ok((header, end))
}

/// Copies `prefix`-named tensors into `params`; every parameter must be present.
pub fn load_params(params: &mut crate::autodiff::ParamSet, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
    for p in params.iter_mut() {
        let name = format!("{prefix}{}", p.name);
        let t = ckpt
            .tensor(&name)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {name}")))?;
        if t.shape() != p.value.shape() {
            return Err(Error::InvalidShape(format!(
                "tensor {name} has shape {} but the model expects {}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t.clone();
    }
    Ok(())
}
