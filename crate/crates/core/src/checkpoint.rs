//! `TFCK` checkpoint files.
//!
//! Layout: magic `TFCK`, u32 LE format version, u32 LE header length, JSON
//! header, then little-endian f32 payload: every parameter in header order,
//! followed by optimizer first and second moments when present.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{AutodiffError, OptimizerState, ParameterSet, Tensor};
use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 4] = b"TFCK";
pub const FORMAT_VERSION: u32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("payload holds {actual} bytes, header declares {declared}")]
    PayloadLength { declared: usize, actual: usize },
    #[error("payload hash mismatch")]
    PayloadHash,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("checkpoint kind `{actual}`, expected `{expected}`")]
    Kind { expected: String, actual: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] AutodiffError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub step: u64,
    /// Parameters with stored moments, each the size of the parameter.
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerEntry>,
    pub metadata: serde_json::Value,
    pub config_hash: String,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub params: ParameterSet<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub metadata: serde_json::Value,
    pub config_hash: String,
}

/// SHA-256 of the compact JSON form of a config value.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let v = serde_json::to_value(config).expect("configs serialize");
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn new(kind: &str, params: ParameterSet<f32>, metadata: serde_json::Value, config_hash: String) -> Self {
        Self {
            kind: kind.to_string(),
            params,
            optimizer: None,
            metadata,
            config_hash,
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(CheckpointError::Kind {
                expected: kind.to_string(),
                actual: self.kind.clone(),
            })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.params.numel() * 4);
        let mut tensors = Vec::with_capacity(self.params.len());
        for (name, p) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
            });
            for v in p.value.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let optimizer = self.optimizer.as_ref().map(|st| {
            let names: Vec<String> = st.first.keys().cloned().collect();
            for moments in [&st.first, &st.second] {
                for n in &names {
                    for v in &moments[n] {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            OptimizerEntry { step: st.step, names }
        });
        let header = Header {
            kind: self.kind.clone(),
            dtype: "f32".into(),
            tensors,
            optimizer,
            metadata: self.metadata.clone(),
            config_hash: self.config_hash.clone(),
            payload_sha256: sha256_hex(&payload),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 12 {
            return Err(CheckpointError::Truncated("shorter than the fixed prefix".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| CheckpointError::Truncated("header runs past end of file".into()))?;
        let raw: serde_json::Value = serde_json::from_slice(&bytes[12..header_end])?;
        let header: Header = serde_json::from_value(migrate(version, raw)?)?;
        let payload = &bytes[header_end..];

        let moment_count: usize = match &header.optimizer {
            Some(o) => o
                .names
                .iter()
                .map(|n| {
                    header
                        .tensors
                        .iter()
                        .find(|t| &t.name == n)
                        .map(|t| t.shape.iter().product::<usize>())
                        .ok_or_else(|| CheckpointError::Header(format!("optimizer state for unknown tensor {n}")))
                })
                .sum::<Result<usize, _>>()?,
            None => 0,
        };
        let param_count: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        let declared = (param_count + 2 * moment_count) * 4;
        if payload.len() != declared {
            return Err(CheckpointError::PayloadLength {
                declared,
                actual: payload.len(),
            });
        }
        if sha256_hex(payload) != header.payload_sha256 {
            return Err(CheckpointError::PayloadHash);
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut take = |n: usize| -> Vec<f32> { floats.by_ref().take(n).collect() };

        let mut params = ParameterSet::new();
        let mut sizes = BTreeMap::new();
        for t in &header.tensors {
            let n = t.shape.iter().product();
            sizes.insert(t.name.clone(), n);
            params.insert(t.name.clone(), Tensor::new(&t.shape, take(n))?, t.trainable)?;
        }
        let optimizer = header.optimizer.as_ref().map(|o| {
            let mut st = OptimizerState::new();
            st.step = o.step;
            for n in &o.names {
                st.first.insert(n.clone(), take(sizes[n]));
            }
            for n in &o.names {
                st.second.insert(n.clone(), take(sizes[n]));
            }
            st
        });
        Ok(Self {
            kind: header.kind,
            params,
            optimizer,
            metadata: header.metadata,
            config_hash: header.config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<String, CheckpointError> {
        let bytes = self.to_bytes();
        write_atomic(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Version 1 headers lacked `kind`, `trainable` flags and optimizer state
/// and named the tensor list `params`.
fn migrate_v1(mut h: serde_json::Value) -> Result<serde_json::Value, CheckpointError> {
    let obj = h
        .as_object_mut()
        .ok_or_else(|| CheckpointError::Header("header is not an object".into()))?;
    let params = obj
        .remove("params")
        .ok_or_else(|| CheckpointError::Header("v1 header without params".into()))?;
    let tensors: Vec<serde_json::Value> = params
        .as_array()
        .ok_or_else(|| CheckpointError::Header("v1 params is not a list".into()))?
        .iter()
        .map(|p| {
            let mut p = p.clone();
            if let Some(o) = p.as_object_mut() {
                o.insert("trainable".into(), true.into());
            }
            p
        })
        .collect();
    let kind = obj
        .get("metadata")
        .and_then(|m| m.get("kind"))
        .cloned()
        .unwrap_or_else(|| "unknown".into());
    obj.insert("tensors".into(), tensors.into());
    obj.insert("kind".into(), kind);
    obj.insert("optimizer".into(), serde_json::Value::Null);
    Ok(h)
}

type Migration = fn(serde_json::Value) -> Result<serde_json::Value, CheckpointError>;

/// `MIGRATIONS[v - 1]` lifts a version `v` header to `v + 1`.
const MIGRATIONS: &[Migration] = &[migrate_v1];

fn migrate(version: u32, mut header: serde_json::Value) -> Result<serde_json::Value, CheckpointError> {
    if version == 0 || version > FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    for m in &MIGRATIONS[(version - 1) as usize..] {
        header = m(header)?;
    }
    Ok(header)
}
