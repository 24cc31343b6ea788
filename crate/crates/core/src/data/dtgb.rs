//! Conversion from the DTGB release layout.
//!
//! ```text
//! edge_list.csv        [index,]u,i,r,ts[,label]  -> events.csv      src,dst,edge_text_id,timestamp
//! entity_text.csv      i,text                    -> node_texts.csv  node_id,text
//! relation_text.csv    i,text                    -> edge_texts.csv  edge_text_id,text
//! ```
//!
//! Columns are located by header name, so a leading unnamed index column and
//! trailing label columns are ignored. Rows are re-sorted stably by `ts`.

use super::dataset::{DyTagDataset, InteractionEvent};
use super::io::write_dataset_dir;
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

pub const DTGB_EDGES_FILE: &str = "edge_list.csv";
pub const DTGB_ENTITY_FILE: &str = "entity_text.csv";
pub const DTGB_RELATION_FILE: &str = "relation_text.csv";

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing column {name:?}"),
        })
}

fn parse<T: std::str::FromStr>(rec: &csv::StringRecord, col: usize, name: &str, path: &Path) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec.get(col).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("missing field {name}"),
    })?;
    // Ids are sometimes written as floats ("12.0") by pandas exports.
    let trimmed = raw.trim();
    let cleaned = trimmed.strip_suffix(".0").unwrap_or(trimmed);
    cleaned.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {name} from {raw:?}"),
    })
}

fn read_texts(path: &Path) -> Result<Vec<(u64, String)>> {
    let mut rdr = open(path)?;
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, "i", path)?;
    let text_col = column(&headers, "text", path)?;
    let mut rows = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id: u64 = parse(&rec, id_col, "i", path)?;
        let text = rec.get(text_col).unwrap_or("").to_string();
        if rows.insert(id, text).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: rec.position().map_or(0, |p| p.line()),
                message: format!("duplicate id {id}"),
            });
        }
    }
    Ok(rows.into_iter().collect())
}

/// Reads a DTGB dataset directory into memory.
pub fn load_dtgb_dir(dir: &Path) -> Result<DyTagDataset> {
    let nodes = read_texts(&dir.join(DTGB_ENTITY_FILE))?;
    let edges = read_texts(&dir.join(DTGB_RELATION_FILE))?;

    let path = dir.join(DTGB_EDGES_FILE);
    let mut rdr = open(&path)?;
    let headers = rdr.headers()?.clone();
    let (u_col, i_col, r_col, ts_col) = (
        column(&headers, "u", &path)?,
        column(&headers, "i", &path)?,
        column(&headers, "r", &path)?,
        column(&headers, "ts", &path)?,
    );
    let node_index = |id: u64| nodes.binary_search_by_key(&id, |(i, _)| *i).ok();
    let edge_index = |id: u64| edges.binary_search_by_key(&id, |(i, _)| *i).ok();
    let mut missing_nodes = Vec::new();
    let mut missing_edges = Vec::new();
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let u: u64 = parse(&rec, u_col, "u", &path)?;
        let i: u64 = parse(&rec, i_col, "i", &path)?;
        let r: u64 = parse(&rec, r_col, "r", &path)?;
        let ts: f64 = parse(&rec, ts_col, "ts", &path)?;
        match (node_index(u), node_index(i), edge_index(r)) {
            (Some(src), Some(dst), Some(edge_text)) => events.push(InteractionEvent {
                src,
                dst,
                edge_text,
                timestamp: ts,
            }),
            (s, d, e) => {
                if s.is_none() {
                    missing_nodes.push(u);
                }
                if d.is_none() {
                    missing_nodes.push(i);
                }
                if e.is_none() {
                    missing_edges.push(r);
                }
            }
        }
    }
    for (what, mut ids) in [("node", missing_nodes), ("edge text", missing_edges)] {
        if !ids.is_empty() {
            ids.sort_unstable();
            ids.dedup();
            return Err(Error::Integrity { what, ids });
        }
    }
    events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    DyTagDataset::new(events, nodes, edges)
}

/// Converts `input` (DTGB layout) into the native three-file layout in `out`.
pub fn convert_dtgb(input: &Path, out: &Path) -> Result<DyTagDataset> {
    let ds = load_dtgb_dir(input)?;
    write_dataset_dir(&ds, out)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::io::load_dataset_dir;
    use std::fs;

    #[test]
    fn converts_release_layout() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(DTGB_EDGES_FILE),
            ",u,i,r,ts,label\n0,0,1,0,5.0,1\n1,1,2,1,2.0,0\n2,2,0,0,9,1\n",
        )
        .unwrap();
        fs::write(
            dir.path().join(DTGB_ENTITY_FILE),
            "i,text\n0,\"first node\"\n1,\"second, with comma\"\n2,third\n",
        )
        .unwrap();
        fs::write(dir.path().join(DTGB_RELATION_FILE), "i,text\n0,likes\n1,\"replies to\"\n").unwrap();

        let out = tempfile::tempdir().unwrap();
        let ds = convert_dtgb(dir.path(), out.path()).unwrap();
        assert_eq!(ds.num_nodes(), 3);
        let ts: Vec<f64> = ds.events().iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![2.0, 5.0, 9.0]);
        assert_eq!(load_dataset_dir(out.path()).unwrap(), ds);
        assert_eq!(ds.node_text(1), "second, with comma");
    }

    #[test]
    fn missing_column_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(DTGB_EDGES_FILE), "u,i,ts\n0,1,1\n").unwrap();
        fs::write(dir.path().join(DTGB_ENTITY_FILE), "i,text\n0,a\n1,b\n").unwrap();
        fs::write(dir.path().join(DTGB_RELATION_FILE), "i,text\n0,x\n").unwrap();
        assert!(matches!(load_dtgb_dir(dir.path()), Err(Error::Parse { .. })));
    }
}
