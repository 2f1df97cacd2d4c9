//! Binary checkpoint: `JSLU`, version byte, little-endian u32 header length,
//! JSON header (config, vocabulary, tensor manifest), then every tensor as
//! little-endian f32 in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::RunConfig;
use crate::data::Vocab;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::{param_layout, JointModel, ModelParams};

pub const MAGIC: &[u8; 4] = b"JSLU";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the tensor data.
    pub offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: BTreeMap<String, Value>,
    vocab: Vocab,
    tensors: Vec<ManifestEntry>,
}

/// Everything needed to rerun inference or evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub model: JointModel<f32>,
}

impl Checkpoint {
    /// The model's own configuration replaces `config.model`.
    pub fn new(model: JointModel<f32>, vocab: Vocab, mut config: RunConfig) -> Self {
        config.model = model.config.clone();
        Checkpoint {
            config,
            vocab,
            model,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut offset = 0;
        for ((name, shape, _), t) in param_layout(&self.model.config)
            .into_iter()
            .zip(self.model.params.tensors())
        {
            tensors.push(ManifestEntry {
                name,
                shape,
                offset,
            });
            offset += 4 * t.len();
        }
        let header = Header {
            config: self.config.to_flat(),
            vocab: self.vocab.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("plain data serializes");
        let mut out = Vec::with_capacity(9 + json.len() + offset);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.model.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 9 {
            return Err(corrupt("file is shorter than the fixed header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        if bytes[4] != VERSION {
            return Err(Error::VersionMismatch {
                found: bytes[4],
                expected: VERSION,
            });
        }
        let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let body = &bytes[9..];
        if body.len() < len {
            return Err(corrupt("header is truncated"));
        }
        let header: Header = serde_json::from_slice(&body[..len])
            .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
        let doc = serde_json::to_value(&header.config).expect("map of values");
        let config = RunConfig::from_sources(Some(&doc), &[])
            .map_err(|e| Error::CorruptCheckpoint(format!("embedded config: {e}")))?;
        let model_config = config
            .model
            .clone()
            .resolved()
            .map_err(|e| Error::CorruptCheckpoint(format!("embedded config: {e}")))?;
        let layout = param_layout(&model_config);
        if layout.len() != header.tensors.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "manifest lists {} tensors, configuration needs {}",
                header.tensors.len(),
                layout.len()
            )));
        }
        let data = &body[len..];
        let mut expected_offset = 0;
        let mut tensors = Vec::with_capacity(layout.len());
        for ((name, shape, _), entry) in layout.iter().zip(&header.tensors) {
            if &entry.name != name {
                return Err(Error::CorruptCheckpoint(format!(
                    "manifest has `{}` where `{name}` belongs",
                    entry.name
                )));
            }
            if &entry.shape != shape {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: entry.shape.clone(),
                });
            }
            if entry.offset != expected_offset {
                return Err(Error::CorruptCheckpoint(format!("bad offset for `{name}`")));
            }
            let n: usize = shape.iter().product();
            let end = entry.offset + 4 * n;
            if end > data.len() {
                return Err(corrupt("tensor data is truncated"));
            }
            let values = data[entry.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor::new(shape.clone(), values)?);
            expected_offset = end;
        }
        if expected_offset != data.len() {
            return Err(corrupt("trailing bytes after tensor data"));
        }
        let checks = [
            ("vocabulary words", header.vocab.num_words(), model_config.vocab_size),
            ("slot tags", header.vocab.num_tags(), model_config.num_tags),
            ("intents", header.vocab.num_intents(), model_config.num_intents),
        ];
        for (what, have, want) in checks {
            if have != want {
                return Err(Error::CorruptCheckpoint(format!(
                    "{have} {what} in the vocabulary, configuration says {want}"
                )));
            }
        }
        let params = ModelParams::from_tensors(&model_config, tensors)?;
        Ok(Checkpoint {
            config,
            vocab: header.vocab,
            model: JointModel::new(model_config, params)?,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
