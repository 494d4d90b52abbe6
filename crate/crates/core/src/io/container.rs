//! Self-describing tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes            | content                                  |
//! |------------------|------------------------------------------|
//! | 0..8             | magic `DWITNSR1`                         |
//! | 8..16            | manifest length `m` (u64)                |
//! | 16..48           | SHA-256 of the manifest bytes            |
//! | 48..48+m         | UTF-8 JSON manifest                      |
//! | 48+m..           | payload: tensor blocks back to back      |
//!
//! Each manifest entry records its block's dtype, shape, payload offset,
//! byte length and SHA-256. Complex tensors are interleaved `re, im` f64.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DWITNSR1";
const HEADER_LEN: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
    F64,
    Complex128,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::Complex128 => 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    Complex128(Vec<Complex64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::Complex128(_) => Dtype::Complex128,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::Complex128(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * self.dtype().size());
        match self {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::Complex128(v) => v.iter().for_each(|x| {
                out.extend_from_slice(&x.re.to_le_bytes());
                out.extend_from_slice(&x.im.to_le_bytes());
            }),
        }
        out
    }

    fn from_le_bytes(dtype: Dtype, bytes: &[u8]) -> Self {
        let f64s = || bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        match dtype {
            Dtype::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            Dtype::F64 => TensorData::F64(f64s().collect()),
            Dtype::Complex128 => {
                let v: Vec<f64> = f64s().collect();
                TensorData::Complex128(v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: &[usize], data: TensorData) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::invalid(format!(
                "tensor '{name}': shape {shape:?} does not match {} elements",
                data.len()
            )));
        }
        Ok(NamedTensor {
            name,
            shape: shape.to_vec(),
            data,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorContainer {
    /// What the file holds, e.g. `model` or `case`.
    pub role: String,
    pub provenance: Provenance,
    /// Role-specific metadata.
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    /// Absolute file offset of the block.
    offset: u64,
    length: u64,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    byte_order: String,
    role: String,
    provenance: Provenance,
    meta: serde_json::Value,
    tensors: Vec<BlockEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl TensorContainer {
    pub fn new(role: impl Into<String>, provenance: Provenance, meta: serde_json::Value) -> Self {
        TensorContainer {
            role: role.into(),
            provenance,
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, tensor: NamedTensor) {
        self.tensors.push(tensor);
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::invalid(format!("container ({}) has no tensor '{name}'", self.role)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let blocks: Vec<Vec<u8>> = self.tensors.iter().map(|t| t.data.to_le_bytes()).collect();
        // offsets depend on the manifest length, which depends on the offsets'
        // digits; iterate until stable
        let mut manifest_len = 0usize;
        let manifest_bytes = loop {
            let mut offset = (HEADER_LEN + manifest_len) as u64;
            let entries = self
                .tensors
                .iter()
                .zip(&blocks)
                .map(|(t, b)| {
                    let e = BlockEntry {
                        name: t.name.clone(),
                        dtype: t.data.dtype(),
                        shape: t.shape.clone(),
                        offset,
                        length: b.len() as u64,
                        sha256: sha256_hex(b),
                    };
                    offset += b.len() as u64;
                    e
                })
                .collect();
            let manifest = Manifest {
                format_version: 1,
                byte_order: "little".into(),
                role: self.role.clone(),
                provenance: self.provenance.clone(),
                meta: self.meta.clone(),
                tensors: entries,
            };
            let bytes = serde_json::to_vec(&manifest)?;
            if bytes.len() == manifest_len {
                break bytes;
            }
            manifest_len = bytes.len();
        };
        let mut out = Vec::with_capacity(HEADER_LEN + manifest_bytes.len() + blocks.iter().map(Vec::len).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&manifest_bytes));
        out.extend_from_slice(&manifest_bytes);
        for b in &blocks {
            out.extend_from_slice(b);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, reason: String| Error::Format {
            offset: offset as u64,
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail(bytes.len(), format!("file ends inside the {HEADER_LEN}-byte header")));
        }
        if &bytes[..8] != MAGIC {
            return Err(fail(0, "bad magic; not a tensor container".into()));
        }
        let m = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let end = HEADER_LEN
            .checked_add(m)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fail(bytes.len(), format!("manifest of {m} bytes is truncated")))?;
        let manifest_bytes = &bytes[HEADER_LEN..end];
        if Sha256::digest(manifest_bytes).as_slice() != &bytes[16..48] {
            return Err(fail(HEADER_LEN, "manifest checksum mismatch".into()));
        }
        let manifest: Manifest = serde_json::from_slice(manifest_bytes)
            .map_err(|e| fail(HEADER_LEN, format!("manifest is not valid JSON: {e}")))?;
        if manifest.byte_order != "little" {
            return Err(fail(HEADER_LEN, format!("unsupported byte order '{}'", manifest.byte_order)));
        }
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let start = e.offset as usize;
            let expected = e.shape.iter().product::<usize>() * e.dtype.size();
            if e.length as usize != expected {
                return Err(fail(
                    start,
                    format!("block '{}' length {} does not match shape {:?}", e.name, e.length, e.shape),
                ));
            }
            let stop = start
                .checked_add(expected)
                .filter(|&s| s <= bytes.len())
                .ok_or_else(|| fail(bytes.len(), format!("payload of block '{}' is truncated", e.name)))?;
            let block = &bytes[start..stop];
            if sha256_hex(block) != e.sha256 {
                return Err(fail(
                    start,
                    format!("checksum mismatch in block '{}' (bytes {start}..{stop})", e.name),
                ));
            }
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data: TensorData::from_le_bytes(e.dtype, block),
            });
        }
        Ok(TensorContainer {
            role: manifest.role,
            provenance: manifest.provenance,
            meta: manifest.meta,
            tensors,
        })
    }
}
