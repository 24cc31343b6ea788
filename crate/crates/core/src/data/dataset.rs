use crate::error::{Error, Result};
use serde::Serialize;

/// One timestamped interaction. Node and edge-text fields are contiguous
/// indices into the owning [`DyTagDataset`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InteractionEvent {
    pub src: usize,
    pub dst: usize,
    pub edge_text: usize,
    pub timestamp: f64,
}

/// Chronological interaction stream with node and edge texts.
///
/// External ids (as they appear in files) are kept sorted; the position of
/// an id in that order is its contiguous index.
#[derive(Clone, Debug, PartialEq)]
pub struct DyTagDataset {
    events: Vec<InteractionEvent>,
    node_ids: Vec<u64>,
    node_texts: Vec<String>,
    edge_ids: Vec<u64>,
    edge_texts: Vec<String>,
}

fn check_sorted_unique(ids: &[u64], what: &'static str) -> Result<()> {
    if let Some(w) = ids.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "{what} ids must be sorted and unique (saw {} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

impl DyTagDataset {
    pub fn new(
        events: Vec<InteractionEvent>,
        nodes: Vec<(u64, String)>,
        edges: Vec<(u64, String)>,
    ) -> Result<Self> {
        let (node_ids, node_texts): (Vec<_>, Vec<_>) = nodes.into_iter().unzip();
        let (edge_ids, edge_texts): (Vec<_>, Vec<_>) = edges.into_iter().unzip();
        check_sorted_unique(&node_ids, "node")?;
        check_sorted_unique(&edge_ids, "edge text")?;
        let ds = Self {
            events,
            node_ids,
            node_texts,
            edge_ids,
            edge_texts,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let mut bad_nodes: Vec<u64> = Vec::new();
        let mut bad_edges: Vec<u64> = Vec::new();
        let mut prev = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            for n in [e.src, e.dst] {
                if n >= self.num_nodes() {
                    bad_nodes.push(n as u64);
                }
            }
            if e.edge_text >= self.num_edge_texts() {
                bad_edges.push(e.edge_text as u64);
            }
            if !e.timestamp.is_finite() || e.timestamp < 0.0 {
                return Err(Error::Data {
                    row: i,
                    message: format!("timestamp {} is not a non-negative number", e.timestamp),
                });
            }
            if e.timestamp < prev {
                return Err(Error::Data {
                    row: i,
                    message: format!("timestamp {} precedes {prev}", e.timestamp),
                });
            }
            prev = e.timestamp;
        }
        if !bad_nodes.is_empty() {
            return Err(Error::Integrity {
                what: "node",
                ids: bad_nodes,
            });
        }
        if !bad_edges.is_empty() {
            return Err(Error::Integrity {
                what: "edge text",
                ids: bad_edges,
            });
        }
        Ok(())
    }

    pub fn events(&self) -> &[InteractionEvent] {
        &self.events
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_edge_texts(&self) -> usize {
        self.edge_ids.len()
    }

    pub fn node_text(&self, node: usize) -> &str {
        &self.node_texts[node]
    }

    pub fn edge_text(&self, edge: usize) -> &str {
        &self.edge_texts[edge]
    }

    pub fn node_texts(&self) -> &[String] {
        &self.node_texts
    }

    pub fn edge_texts(&self) -> &[String] {
        &self.edge_texts
    }

    pub fn node_id(&self, node: usize) -> u64 {
        self.node_ids[node]
    }

    pub fn edge_id(&self, edge: usize) -> u64 {
        self.edge_ids[edge]
    }

    pub fn node_index(&self, id: u64) -> Option<usize> {
        self.node_ids.binary_search(&id).ok()
    }

    pub fn edge_index(&self, id: u64) -> Option<usize> {
        self.edge_ids.binary_search(&id).ok()
    }

    /// All nodes that appear as a destination anywhere, sorted.
    pub fn destination_universe(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_nodes()];
        for e in &self.events {
            seen[e.dst] = true;
        }
        seen.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect()
    }

    /// Same texts, extra events appended after the current ones.
    pub fn with_appended(&self, extra: &[InteractionEvent]) -> Result<Self> {
        let mut ds = self.clone();
        ds.events.extend_from_slice(extra);
        ds.validate()?;
        Ok(ds)
    }
}
