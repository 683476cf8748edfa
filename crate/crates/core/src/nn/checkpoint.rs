// Container layout:
//   "SNCK" | u32 version | u64 header length | JSON header | f64 LE tensor data
// The header carries the config, full vocabularies with their hashes, and the
// name and shape of every tensor in data order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::data::{SourceKind, VocabKind, Vocabulary};
use crate::error::{Result, SignError};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Text2Pose,
    Pose2Text,
}

#[derive(Serialize, Deserialize)]
struct VocabEntry {
    name: String,
    kind: VocabKind,
    hash: String,
    tokens: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: ModelConfig,
    source: Option<SourceKind>,
    vocabularies: Vec<VocabEntry>,
    tensors: Vec<TensorEntry>,
}

/// Serialisable snapshot of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub source: Option<SourceKind>,
    pub vocabularies: Vec<(String, Vocabulary)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn corrupt(msg: impl Into<String>) -> SignError {
    SignError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(corrupt(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn vocabulary(&self, name: &str) -> Result<&Vocabulary> {
        self.vocabularies
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| corrupt(format!("missing vocabulary `{name}`")))
    }

    /// Byte-stable encoding: identical parameters give identical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind,
            config: self.config.clone(),
            source: self.source,
            vocabularies: self
                .vocabularies
                .iter()
                .map(|(name, v)| VocabEntry {
                    name: name.clone(),
                    kind: v.kind(),
                    hash: v.hash(),
                    tokens: v.content_tokens().to_vec(),
                })
                .collect(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let data_len: usize = self.tensors.iter().map(|(_, t)| t.numel() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + data_len);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(hlen)).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(format!("bad header: {e}")))?;
        let mut vocabularies = Vec::with_capacity(header.vocabularies.len());
        for e in header.vocabularies {
            let v = Vocabulary::from_list(e.kind, e.tokens);
            if v.hash() != e.hash {
                return Err(corrupt(format!("vocabulary `{}` does not match its hash", e.name)));
            }
            vocabularies.push((e.name, v));
        }
        let mut offset = 16 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let chunk = bytes
                .get(offset..offset + n * 8)
                .ok_or_else(|| corrupt(format!("truncated data for `{}`", e.name)))?;
            offset += n * 8;
            let data = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(e.shape, data).map_err(|err| corrupt(format!("tensor `{}`: {err}", e.name)))?;
            tensors.push((e.name, t));
        }
        if offset != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - offset)));
        }
        Ok(Checkpoint {
            kind: header.kind,
            config: header.config,
            source: header.source,
            vocabularies,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| SignError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| SignError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
