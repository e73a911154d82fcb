//! Binary container for named tensors plus a JSON header.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, JSON header,
//! then the concatenated little-endian tensor payloads.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tch::{Kind, Tensor};

use crate::data_model::atomic_write;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"NGCKPT\0\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DType {
    F32,
    F64,
    I64,
}

impl DType {
    fn of(kind: Kind) -> Result<Self> {
        match kind {
            Kind::Float => Ok(Self::F32),
            Kind::Double => Ok(Self::F64),
            Kind::Int64 => Ok(Self::I64),
            other => Err(Error::Argument(format!("unsupported tensor kind {other:?}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 | Self::I64 => 8,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: DType,
    shape: Vec<i64>,
    offset: usize,
    bytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config_hash: String,
    epoch: usize,
    step: u64,
    meta: serde_json::Value,
    payload_sha256: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub config_hash: String,
    pub epoch: usize,
    pub step: u64,
    /// Free-form state such as serialized rng streams.
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

fn tensor_bytes(t: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    let flat = t.detach().contiguous().view(-1);
    Ok(match dtype {
        DType::F32 => Vec::<f32>::try_from(&flat)?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        DType::F64 => Vec::<f64>::try_from(&flat)?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        DType::I64 => Vec::<i64>::try_from(&flat)?.iter().flat_map(|v| v.to_le_bytes()).collect(),
    })
}

fn tensor_from_bytes(bytes: &[u8], dtype: DType, shape: &[i64]) -> Tensor {
    let t = match dtype {
        DType::F32 => {
            let v: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_slice(&v)
        }
        DType::F64 => {
            let v: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_slice(&v)
        }
        DType::I64 => {
            let v: Vec<i64> = bytes.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_slice(&v)
        }
    };
    t.reshape(shape)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let dtype = DType::of(t.kind())?;
            let bytes = tensor_bytes(t, dtype)?;
            entries.push(TensorEntry {
                name: name.clone(),
                dtype,
                shape: t.size(),
                offset: payload.len(),
                bytes: bytes.len(),
            });
            payload.extend_from_slice(&bytes);
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            config_hash: self.config_hash.clone(),
            epoch: self.epoch,
            step: self.step,
            meta: self.meta.clone(),
            payload_sha256: hex::encode(Sha256::digest(&payload)),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        atomic_write(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |detail: &str| Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        };
        if raw.len() < 16 || &raw[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let header_len = u64::from_le_bytes(raw[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= raw.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(&raw[16..header_end]).map_err(|e| Error::json(path, e))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: header.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let payload = &raw[header_end..];
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(Error::Checksum(path.to_path_buf()));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let numel: i64 = e.shape.iter().product();
            let end = e.offset + e.bytes;
            if end > payload.len() || e.bytes != numel as usize * e.dtype.width() {
                return Err(corrupt(&format!("tensor {} has an inconsistent extent", e.name)));
            }
            tensors.push((e.name.clone(), tensor_from_bytes(&payload[e.offset..end], e.dtype, &e.shape)));
        }
        Ok(Self {
            config_hash: header.config_hash,
            epoch: header.epoch,
            step: header.step,
            meta: header.meta,
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies stored values into `targets` (names taken with `prefix`).
    pub fn restore_into(&self, prefix: &str, targets: &[(String, Tensor)], path: &Path) -> Result<()> {
        for (name, dst) in targets {
            let key = format!("{prefix}{name}");
            let src = self.get(&key).ok_or_else(|| Error::ShapeMismatch {
                path: path.to_path_buf(),
                detail: format!("missing tensor {key}"),
            })?;
            if src.size() != dst.size() {
                return Err(Error::ShapeMismatch {
                    path: path.to_path_buf(),
                    detail: format!("tensor {key}: stored {:?}, expected {:?}", src.size(), dst.size()),
                });
            }
            tch::no_grad(|| dst.shallow_clone().copy_(&src.to_kind(dst.kind())));
        }
        Ok(())
    }
}

/// Prefixes every name, for packing several networks into one archive.
pub fn prefixed(prefix: &str, tensors: Vec<(String, Tensor)>) -> Vec<(String, Tensor)> {
    tensors.into_iter().map(|(n, t)| (format!("{prefix}{n}"), t)).collect()
}
