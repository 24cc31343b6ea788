//! CSV layout for datasets on disk.
//!
//! ```text
//! events.csv      src,dst,edge_text_id,timestamp
//! node_texts.csv  node_id,text
//! edge_texts.csv  edge_text_id,text
//! ```

use super::dataset::{DyTagDataset, InteractionEvent};
use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const EVENTS_FILE: &str = "events.csv";
pub const NODE_TEXTS_FILE: &str = "node_texts.csv";
pub const EDGE_TEXTS_FILE: &str = "edge_texts.csv";

const EVENTS_HEADER: [&str; 4] = ["src", "dst", "edge_text_id", "timestamp"];

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn check_header(rdr: &mut csv::Reader<fs::File>, path: &Path, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            format!("expected header {}, found {}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn parse_err(path: &Path, line: u64, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, path: &Path, line: u64) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| parse_err(path, line, format!("missing field {name}")))?;
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {name} from {raw:?}")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn load_texts(path: &Path, id_col: &str) -> Result<Vec<(u64, String)>> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, path, &[id_col, "text"])?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = line_of(&rec);
        if rec.len() != 2 {
            return Err(parse_err(path, line, format!("expected 2 fields, found {}", rec.len())));
        }
        let id: u64 = field(&rec, 0, id_col, path, line)?;
        if !seen.insert(id) {
            return Err(parse_err(path, line, format!("duplicate {id_col} {id}")));
        }
        out.push((id, rec[1].to_string()));
    }
    out.sort_by_key(|(id, _)| *id);
    Ok(out)
}

/// Loads and validates a dataset. Events out of timestamp order are stably
/// re-sorted with a warning.
pub fn load_dataset(events_path: &Path, node_texts_path: &Path, edge_texts_path: &Path) -> Result<DyTagDataset> {
    let nodes = load_texts(node_texts_path, "node_id")?;
    let edges = load_texts(edge_texts_path, "edge_text_id")?;
    let node_index = |id: u64| nodes.binary_search_by_key(&id, |(i, _)| *i).ok();
    let edge_index = |id: u64| edges.binary_search_by_key(&id, |(i, _)| *i).ok();

    let mut rdr = reader(events_path)?;
    check_header(&mut rdr, events_path, &EVENTS_HEADER)?;
    let mut events = Vec::new();
    let mut missing_nodes = BTreeSet::new();
    let mut missing_edges = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(events_path, line, e.to_string())
        })?;
        let line = line_of(&rec);
        if rec.len() != 4 {
            return Err(parse_err(events_path, line, format!("expected 4 fields, found {}", rec.len())));
        }
        let src: u64 = field(&rec, 0, "src", events_path, line)?;
        let dst: u64 = field(&rec, 1, "dst", events_path, line)?;
        let edge: u64 = field(&rec, 2, "edge_text_id", events_path, line)?;
        let ts: f64 = field(&rec, 3, "timestamp", events_path, line)?;
        if !ts.is_finite() || ts < 0.0 {
            return Err(parse_err(events_path, line, format!("timestamp {ts} is not a non-negative number")));
        }
        let (s, d, r) = (node_index(src), node_index(dst), edge_index(edge));
        if s.is_none() {
            missing_nodes.insert(src);
        }
        if d.is_none() {
            missing_nodes.insert(dst);
        }
        if r.is_none() {
            missing_edges.insert(edge);
        }
        if let (Some(src), Some(dst), Some(edge_text)) = (s, d, r) {
            events.push(InteractionEvent {
                src,
                dst,
                edge_text,
                timestamp: ts,
            });
        }
    }
    if !missing_nodes.is_empty() {
        return Err(Error::Integrity {
            what: "node",
            ids: missing_nodes.into_iter().collect(),
        });
    }
    if !missing_edges.is_empty() {
        return Err(Error::Integrity {
            what: "edge text",
            ids: missing_edges.into_iter().collect(),
        });
    }
    if events.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        log::warn!(
            "{}: events not in timestamp order; re-sorting (stable)",
            events_path.display()
        );
        events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    }
    DyTagDataset::new(events, nodes, edges)
}

pub fn load_dataset_dir(dir: &Path) -> Result<DyTagDataset> {
    load_dataset(
        &dir.join(EVENTS_FILE),
        &dir.join(NODE_TEXTS_FILE),
        &dir.join(EDGE_TEXTS_FILE),
    )
}

fn quote(text: &str) -> String {
    format!("\"{}\"", text.replace('"', "\"\""))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes the three CSV files into `dir` (created if missing).
pub fn write_dataset_dir(ds: &DyTagDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut events = String::from("src,dst,edge_text_id,timestamp\n");
    for e in ds.events() {
        events.push_str(&format!(
            "{},{},{},{}\n",
            ds.node_id(e.src),
            ds.node_id(e.dst),
            ds.edge_id(e.edge_text),
            e.timestamp
        ));
    }
    write_file(&dir.join(EVENTS_FILE), &events)?;

    let mut nodes = String::from("node_id,text\n");
    for i in 0..ds.num_nodes() {
        nodes.push_str(&format!("{},{}\n", ds.node_id(i), quote(ds.node_text(i))));
    }
    write_file(&dir.join(NODE_TEXTS_FILE), &nodes)?;

    let mut edges = String::from("edge_text_id,text\n");
    for i in 0..ds.num_edge_texts() {
        edges.push_str(&format!("{},{}\n", ds.edge_id(i), quote(ds.edge_text(i))));
    }
    write_file(&dir.join(EDGE_TEXTS_FILE), &edges)
}
