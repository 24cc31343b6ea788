//! Fixed text representations for node and edge texts.
//!
//! Two interchangeable sources: a precomputed [`EmbeddingTable`] read from an
//! `EMB1` binary file, and a salted bag-of-tokens hashing embedder. Both hand
//! the model dense matrices only; raw text never reaches it.
//!
//! `EMB1` layout: the magic bytes `EMB1`, then `rows` and `dim` as
//! little-endian `u64`, then `rows * dim` little-endian `f32` values in
//! row-major order. Row `i` belongs to contiguous id `i`.

use crate::autodiff::Tensor;
use crate::data::DyTagDataset;
use crate::error::{Error, Result};
use crate::rng::fnv1a;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Format(format!("row {i} has length {}, expected {dim}", r.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data {
                    row: i,
                    message: "non-finite embedding value".into(),
                });
            }
        }
        Ok(Self { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> Option<&[f64]> {
        self.rows.get(i).map(Vec::as_slice)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.rows.len() * self.dim * 4);
        out.extend_from_slice(EMB_MAGIC);
        out.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for r in &self.rows {
            for &v in r {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != EMB_MAGIC {
            return Err(Error::Format("missing EMB1 header".into()));
        }
        let rows = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let dim = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(20))
            .ok_or_else(|| Error::Format(format!("header shape {rows}x{dim} overflows")))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "header declares {rows}x{dim} ({expected} bytes) but file has {} bytes",
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let rows = if dim == 0 {
            vec![Vec::new(); rows]
        } else {
            values.chunks(dim).map(<[f64]>::to_vec).collect()
        };
        Self::new(dim, rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_embedding_table(path: &Path) -> Result<EmbeddingTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::from_bytes(&bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashingEmbedderConfig {
    pub dim: usize,
    pub salt: u64,
}

impl HashingEmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 8 {
            return Err(Error::Config(format!("embedding dim {} is below the minimum of 8", self.dim)));
        }
        Ok(())
    }
}

/// Signed feature hashing over whitespace tokens, L2-normalized.
pub fn hash_embed(cfg: &HashingEmbedderConfig, text: &str) -> Vec<f64> {
    let mut v = vec![0.0; cfg.dim];
    for tok in text.split_whitespace() {
        let h = crate::rng::splitmix64(fnv1a(tok.as_bytes()) ^ cfg.salt);
        let idx = (h % cfg.dim as u64) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        v[idx] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

pub enum EmbeddingSource<'a> {
    Hash(HashingEmbedderConfig),
    Table {
        nodes: &'a EmbeddingTable,
        edges: &'a EmbeddingTable,
    },
}

/// Node and edge-text embedding matrices aligned to contiguous indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TextFeatures {
    pub nodes: Tensor,
    pub edges: Tensor,
}

impl TextFeatures {
    pub fn dim(&self) -> usize {
        self.nodes.cols()
    }
}

fn from_table(table: &EmbeddingTable, count: usize, what: &'static str) -> Result<Tensor> {
    if table.len() < count {
        return Err(Error::Coverage {
            what,
            ids: (table.len()..count).collect(),
        });
    }
    let data = table.rows[..count].concat();
    Tensor::new(vec![count, table.dim()], data)
}

fn from_hash(cfg: &HashingEmbedderConfig, texts: &[String]) -> Result<Tensor> {
    let data: Vec<f64> = texts.iter().flat_map(|t| hash_embed(cfg, t)).collect();
    Tensor::new(vec![texts.len(), cfg.dim], data)
}

pub fn embed_all(ds: &DyTagDataset, source: &EmbeddingSource<'_>) -> Result<TextFeatures> {
    match source {
        EmbeddingSource::Hash(cfg) => {
            cfg.validate()?;
            Ok(TextFeatures {
                nodes: from_hash(cfg, ds.node_texts())?,
                edges: from_hash(cfg, ds.edge_texts())?,
            })
        }
        EmbeddingSource::Table { nodes, edges } => {
            if nodes.dim() != edges.dim() {
                return Err(Error::Format(format!(
                    "node table dim {} differs from edge table dim {}",
                    nodes.dim(),
                    edges.dim()
                )));
            }
            Ok(TextFeatures {
                nodes: from_table(nodes, ds.num_nodes(), "node embedding")?,
                edges: from_table(edges, ds.num_edge_texts(), "edge embedding")?,
            })
        }
    }
}
