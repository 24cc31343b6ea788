//! Checkpoint files.
//!
//! A plain-text header followed by one binary frame per tensor:
//!
//! ```text
//! PRISM-CKPT v1
//! text_dim <n>
//! config <json>
//! tensors <count>
//! tensor <name> <dim>x<dim>...
//! ...
//! end_header
//! <frame>*    frame = "TNS8" | rows: u64 LE | cols: u64 LE | rows*cols f64 LE
//! ```
//!
//! Values are stored as raw 64-bit floats so a round trip is bit-exact.

use super::config::PrismConfig;
use super::forward::PrismModel;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;
use std::fs;
use std::path::Path;

const HEADER_MAGIC: &str = "PRISM-CKPT v1";
const FRAME_MAGIC: &[u8; 4] = b"TNS8";

fn shape_str(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".into();
    }
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    if s == "scalar" {
        return Ok(Vec::new());
    }
    s.split('x')
        .map(|p| p.parse().map_err(|_| Error::Checkpoint(format!("bad shape {s:?}"))))
        .collect()
}

pub fn checkpoint_bytes(model: &PrismModel) -> Result<Vec<u8>> {
    let mut header = format!(
        "{HEADER_MAGIC}\ntext_dim {}\nconfig {}\ntensors {}\n",
        model.text_dim,
        serde_json::to_string(&model.config)?,
        model.params.len()
    );
    for (name, t) in model.params.names.iter().zip(&model.params.tensors) {
        header.push_str(&format!("tensor {name} {}\n", shape_str(t.shape())));
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for t in &model.params.tensors {
        out.extend_from_slice(FRAME_MAGIC);
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &PrismModel, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model)?).map_err(|e| Error::io(path, e))
}

struct Header {
    text_dim: usize,
    config: PrismConfig,
    tensors: Vec<(String, Vec<usize>)>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let end_marker = b"end_header\n";
    let end = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| Error::Checkpoint("missing end_header".into()))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER_MAGIC) {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut text_dim = None;
    let mut config = None;
    let mut tensors = Vec::new();
    for line in lines {
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "text_dim" => {
                text_dim = Some(rest.parse().map_err(|_| Error::Checkpoint(format!("bad text_dim {rest:?}")))?)
            }
            "config" => config = Some(serde_json::from_str(rest)?),
            "tensors" => {}
            "tensor" => {
                let (name, shape) = rest
                    .rsplit_once(' ')
                    .ok_or_else(|| Error::Checkpoint(format!("bad tensor line {line:?}")))?;
                tensors.push((name.to_string(), parse_shape(shape)?));
            }
            other => return Err(Error::Checkpoint(format!("unknown header key {other:?}"))),
        }
    }
    Ok(Header {
        text_dim: text_dim.ok_or_else(|| Error::Checkpoint("missing text_dim".into()))?,
        config: config.ok_or_else(|| Error::Checkpoint("missing config".into()))?,
        tensors,
        body_offset: end + end_marker.len(),
    })
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<PrismModel> {
    let header = parse_header(bytes)?;
    let mut model = PrismModel::new(header.config, header.text_dim, &Rng::new(0))?;
    let expected: Vec<(String, Vec<usize>)> = model
        .params
        .names
        .iter()
        .cloned()
        .zip(model.params.tensors.iter().map(|t| t.shape().to_vec()))
        .collect();
    if expected != header.tensors {
        let diff: Vec<String> = expected
            .iter()
            .zip(&header.tensors)
            .filter(|(a, b)| a != b)
            .map(|(a, b)| format!("{} {} vs {} {}", a.0, shape_str(&a.1), b.0, shape_str(&b.1)))
            .take(5)
            .collect();
        return Err(Error::Checkpoint(format!(
            "tensor manifest does not match the configured model ({} vs {} blocks): {}",
            expected.len(),
            header.tensors.len(),
            diff.join("; ")
        )));
    }
    let mut pos = header.body_offset;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(*pos..*pos + n)
            .ok_or_else(|| Error::Checkpoint("truncated tensor data".into()))?;
        *pos += n;
        Ok(s)
    };
    for (t, name) in model.params.tensors.iter_mut().zip(&model.params.names) {
        if take(&mut pos, 4)? != FRAME_MAGIC {
            return Err(Error::Checkpoint(format!("bad frame magic for {name}")));
        }
        let rows = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes")) as usize;
        let cols = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes")) as usize;
        if rows != t.rows() || cols != t.cols() {
            return Err(Error::Checkpoint(format!(
                "{name}: frame is {rows}x{cols}, expected {}x{}",
                t.rows(),
                t.cols()
            )));
        }
        let raw = take(&mut pos, rows * cols * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *t = Tensor::new(t.shape().to_vec(), data)?;
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<PrismModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

/// Loads a checkpoint and checks it against the embedding width the caller
/// will feed it.
pub fn load_checkpoint_for(path: &Path, text_dim: usize) -> Result<PrismModel> {
    let model = load_checkpoint(path)?;
    if model.text_dim != text_dim {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects text embeddings of dim {}, data provides {text_dim}",
            model.text_dim
        )));
    }
    Ok(model)
}
