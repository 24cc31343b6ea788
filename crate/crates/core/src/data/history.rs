use super::dataset::{DyTagDataset, InteractionEvent};
use std::ops::Range;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HistoryEntry {
    pub partner: usize,
    pub edge_text: usize,
    pub timestamp: f64,
}

/// Left-padded recent history of one node before a query time.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub entries: Vec<HistoryEntry>,
    pub mask: Vec<bool>,
}

impl History {
    pub fn valid(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter().zip(&self.mask).filter(|(_, &m)| m).map(|(e, _)| e)
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }
}

/// Per-node chronological interaction lists. Every event is recorded under
/// both endpoints, with the other endpoint as partner.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryIndex {
    per_node: Vec<Vec<HistoryEntry>>,
}

impl HistoryIndex {
    pub fn empty(num_nodes: usize) -> Self {
        Self {
            per_node: vec![Vec::new(); num_nodes],
        }
    }

    /// Index over `ds.events()[range]`.
    pub fn build(ds: &DyTagDataset, range: Range<usize>) -> Self {
        let mut idx = Self::empty(ds.num_nodes());
        for e in &ds.events()[range] {
            idx.push(e);
        }
        idx
    }

    pub fn build_all(ds: &DyTagDataset) -> Self {
        Self::build(ds, 0..ds.num_events())
    }

    /// Appends one event; events must arrive in timestamp order.
    pub fn push(&mut self, e: &InteractionEvent) {
        self.per_node[e.src].push(HistoryEntry {
            partner: e.dst,
            edge_text: e.edge_text,
            timestamp: e.timestamp,
        });
        self.per_node[e.dst].push(HistoryEntry {
            partner: e.src,
            edge_text: e.edge_text,
            timestamp: e.timestamp,
        });
    }

    pub fn num_nodes(&self) -> usize {
        self.per_node.len()
    }

    pub fn entries(&self, node: usize) -> &[HistoryEntry] {
        &self.per_node[node]
    }

    /// Most recent `len` interactions of `node` strictly before `t`, in
    /// chronological order, left-padded with zeroed entries.
    pub fn extract_history(&self, node: usize, t: f64, len: usize) -> History {
        assert!(len >= 1, "history length must be at least 1");
        let list = &self.per_node[node];
        let end = list.partition_point(|h| h.timestamp < t);
        let start = end.saturating_sub(len);
        let real = &list[start..end];
        let pad = len - real.len();
        let mut entries = vec![HistoryEntry::default(); pad];
        entries.extend_from_slice(real);
        let mut mask = vec![false; pad];
        mask.extend(std::iter::repeat_n(true, real.len()));
        History { entries, mask }
    }
}
