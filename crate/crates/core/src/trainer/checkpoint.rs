//! Binary checkpoint files.
//!
//! Layout: `b"TREX"`, u32 LE version, u64 LE header length, the JSON header,
//! then every tensor as little-endian f64 in layout order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::CategoryVocab;
use crate::error::{Error, Result};
use crate::model::{Layout, ModelConfig, Parameters};
use crate::numeric::Matrix;

pub const MAGIC: &[u8; 4] = b"TREX";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Epoch the stored parameters come from; 0 is the initialization.
    pub epoch: usize,
    pub best_val_loss: f64,
    pub seed: u64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub vocab: CategoryVocab,
    pub params: Parameters,
    pub meta: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    vocab: Vec<String>,
    meta: TrainingMetadata,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.clone(),
            vocab: self.vocab.names().to_vec(),
            meta: self.meta.clone(),
            tensors: self
                .params
                .names
                .iter()
                .zip(&self.params.tensors)
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.params.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 4 {
            return Err(corrupt("file shorter than magic"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 16 {
            return Err(corrupt("truncated preamble"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let body = &bytes[16..];
        let hlen = usize::try_from(hlen)
            .ok()
            .filter(|&h| h <= body.len())
            .ok_or_else(|| corrupt("header length exceeds file"))?;
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;

        header.model.validate()?;
        let vocab = CategoryVocab::new(header.vocab)?;
        if vocab.size() != header.model.vocab_size {
            return Err(Error::CorruptCheckpoint(format!(
                "vocabulary of {} tokens, model expects {}",
                vocab.size(),
                header.model.vocab_size
            )));
        }
        let layout = Layout::new(&header.model);
        let declared = header.tensors.len() == layout.specs.len()
            && header
                .tensors
                .iter()
                .zip(&layout.specs)
                .all(|(t, s)| t.name == s.name && t.rows == s.rows && t.cols == s.cols);
        if !declared {
            return Err(corrupt("tensor manifest does not match model config"));
        }

        let data = &body[hlen..];
        let expected: usize = layout.specs.iter().map(|s| s.rows * s.cols).sum::<usize>() * 8;
        if data.len() != expected {
            return Err(Error::CorruptCheckpoint(format!(
                "{} bytes of tensor data, expected {expected}",
                data.len()
            )));
        }
        let mut chunks = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut names = Vec::with_capacity(layout.specs.len());
        let mut tensors = Vec::with_capacity(layout.specs.len());
        for s in &layout.specs {
            let vals: Vec<f64> = chunks.by_ref().take(s.rows * s.cols).collect();
            tensors.push(Matrix::from_vec(s.rows, s.cols, vals)?);
            names.push(s.name.clone());
        }
        Ok(Self {
            model: header.model,
            vocab,
            params: Parameters { names, tensors },
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
