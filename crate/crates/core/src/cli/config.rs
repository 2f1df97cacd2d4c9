//! Run configuration as a flat map of dotted keys.
//!
//! `{"model.hidden_dim": 64, "train.adadelta.lr": 1.0}` and the nested
//! `{"model": {"hidden_dim": 64}}` are equivalent. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::CorpusFormat;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: CorpusFormat,
    pub min_count: usize,
    /// Optional `word v1 … vD` file overlaid on the word embeddings.
    pub embeddings: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            dev: None,
            test: None,
            format: CorpusFormat::Columns,
            min_count: 1,
            embeddings: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Checkpoint path; curves and the resolved config are written next to it.
    pub checkpoint: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            checkpoint: PathBuf::from("model.jslu"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
}

fn flatten_into(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Object(map) if !map.is_empty() => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

/// Dotted-key view of a JSON document.
pub fn flatten(value: &Value) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    flatten_into("", value, &mut out);
    out
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Result<Value> {
    let mut root = Map::new();
    for (key, value) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("malformed key `{key}`")));
        }
        let mut node = &mut root;
        for part in &parts[..parts.len() - 1] {
            let entry = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            if entry.is_null() {
                *entry = Value::Object(Map::new());
            }
            node = entry
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("key `{key}` nests under a plain value")))?;
        }
        let leaf = parts[parts.len() - 1].to_string();
        match (node.get(&leaf), value) {
            // a section set to null followed by one of its fields keeps the fields
            (Some(Value::Object(_)), Value::Null) => {}
            _ => {
                node.insert(leaf, value.clone());
            }
        }
    }
    Ok(Value::Object(root))
}

/// Parses a flag value: JSON when it parses, otherwise a plain string.
pub fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Builds the configuration from an optional JSON document plus
    /// `key = value` overrides applied in order.
    pub fn from_sources(document: Option<&Value>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut flat = document.map(flatten).unwrap_or_default();
        if flat.len() == 1 && flat.contains_key("") {
            return Err(Error::Config("configuration must be a JSON object".into()));
        }
        for (k, v) in overrides {
            flat.insert(k.clone(), v.clone());
        }
        let nested = unflatten(&flat)?;
        let cfg: RunConfig = serde_json::from_value(nested).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Some(serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?)
            }
            None => None,
        };
        Self::from_sources(doc.as_ref(), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let mut m = self.model.clone();
        if m.mode == crate::model::Mode::Latent {
            m.tag_embed_dim = m.hidden_dim;
        }
        m.validate()
    }

    /// Every setting, defaults included, as dotted keys.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        flatten(&serde_json::to_value(self).expect("plain data serializes"))
    }

    pub fn to_flat_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_flat()).expect("plain data serializes")
    }
}
