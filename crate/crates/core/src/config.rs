//! Run configuration: one strict JSON document covering data, embedding,
//! model, objectives, training and evaluation, plus `path=value` overrides.

use crate::data::{DyTagDataset, Setting, DEFAULT_RATIOS};
use crate::embedding::{embed_all, load_embedding_table, EmbeddingSource, HashingEmbedderConfig, TextFeatures};
use crate::error::{Error, Result};
use crate::evaluation::{DEFAULT_HITS_K, DEFAULT_POOL_SIZE};
use crate::model::PrismConfig;
use crate::objectives::ObjectiveWeights;
use crate::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub split_ratios: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Hash,
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    pub source: EmbeddingKind,
    /// Hashing embedder width; ignored for tables.
    pub dim: usize,
    pub salt: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_table: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_table: Option<PathBuf>,
}

impl EmbeddingSection {
    /// Embeds every node and edge text of `ds` with the configured source.
    pub fn features(&self, ds: &DyTagDataset) -> Result<TextFeatures> {
        match self.source {
            EmbeddingKind::Hash => embed_all(
                ds,
                &EmbeddingSource::Hash(HashingEmbedderConfig {
                    dim: self.dim,
                    salt: self.salt,
                }),
            ),
            EmbeddingKind::Table => {
                let (Some(nodes), Some(edges)) = (&self.node_table, &self.edge_table) else {
                    return Err(Error::Config(
                        "embedding.source = \"table\" needs embedding.node_table and embedding.edge_table".into(),
                    ));
                };
                let nodes = load_embedding_table(nodes)?;
                let edges = load_embedding_table(edges)?;
                embed_all(
                    ds,
                    &EmbeddingSource::Table {
                        nodes: &nodes,
                        edges: &edges,
                    },
                )
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Retrieval candidate pool size.
    #[serde(rename = "C")]
    pub pool_size: usize,
    #[serde(rename = "K_list")]
    pub hits_k: Vec<usize>,
    pub settings: Vec<Setting>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub embedding: EmbeddingSection,
    pub model: PrismConfig,
    pub objectives: ObjectiveWeights,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSection {
                split_ratios: DEFAULT_RATIOS,
            },
            embedding: EmbeddingSection {
                source: EmbeddingKind::Hash,
                dim: 128,
                salt: 0,
                node_table: None,
                edge_table: None,
            },
            model: PrismConfig::default(),
            objectives: ObjectiveWeights::default(),
            train: TrainConfig::default(),
            eval: EvalSection {
                pool_size: DEFAULT_POOL_SIZE,
                hits_k: DEFAULT_HITS_K.to_vec(),
                settings: vec![Setting::Transductive, Setting::Inductive],
            },
        }
    }
}

/// Rewrites serde's `missing field `x`` so the message names the full path.
fn describe(err: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = err.path().to_string();
    let inner = err.inner().to_string();
    let prefix = if path == "." { String::new() } else { format!("{path}.") };
    if let Some(field) = inner.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
        return Error::Config(format!("missing config key `{prefix}{field}`"));
    }
    if let Some(field) = inner.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
        return Error::Config(format!("unknown config key `{prefix}{field}`"));
    }
    Error::Config(format!("config key `{path}`: {inner}"))
}

impl RunConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(describe)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        Self::from_value(value)
    }

    /// Reads `path` (or starts from defaults when `None`) and applies
    /// `key.path=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{} is not valid JSON: {e}", p.display())))?
            }
            None => serde_json::to_value(Self::default())?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.data.split_ratios;
        if r.iter().any(|x| !x.is_finite() || *x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("data.split_ratios {r:?} must be non-negative and sum to 1")));
        }
        self.model.validate()?;
        self.objectives.validate()?;
        self.train.validate()?;
        if self.eval.pool_size < 2 {
            return Err(Error::Config("eval.C must be at least 2".into()));
        }
        if self.eval.hits_k.contains(&0) {
            return Err(Error::Config("eval.K_list entries must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Applies one `a.b.c=value` override. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not of the form key.path=value")))?;
    let path = path.trim();
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let unknown = || Error::Config(format!("unknown config key `{path}`"));
    let (parents, leaf) = match path.rsplit_once('.') {
        Some((p, l)) => (Some(p), l),
        None => (None, path),
    };
    let mut node = root;
    for key in parents.into_iter().flat_map(|p| p.split('.')) {
        node = node.as_object_mut().and_then(|m| m.get_mut(key)).ok_or_else(unknown)?;
    }
    // Optional keys may be absent from the document; the strict schema
    // rejects anything that is not a real field.
    node.as_object_mut().ok_or_else(unknown)?.insert(leaf.to_string(), new);
    Ok(())
}
