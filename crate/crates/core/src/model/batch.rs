use crate::data::HistoryIndex;
use crate::error::{Error, Result};

/// A candidate interaction `(src, dst, t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairQuery {
    pub src: usize,
    pub dst: usize,
    pub time: f64,
}

/// Padded history inputs for one side of every pair, flattened `n * L`.
/// Padded slots hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct SideHistory {
    pub partners: Vec<usize>,
    pub edges: Vec<usize>,
    pub delta_t: Vec<f64>,
    pub mask: Vec<bool>,
}

impl SideHistory {
    /// Whether row `i` has at least one real interaction.
    pub fn non_empty(&self, i: usize, len: usize) -> bool {
        self.mask[i * len..(i + 1) * len].iter().any(|&m| m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BehavioralBatch {
    pub queries: Vec<PairQuery>,
    pub history_len: usize,
    pub src_side: SideHistory,
    pub dst_side: SideHistory,
}

fn side(index: &HistoryIndex, nodes: impl Iterator<Item = (usize, f64)>, len: usize) -> SideHistory {
    let mut s = SideHistory {
        partners: Vec::new(),
        edges: Vec::new(),
        delta_t: Vec::new(),
        mask: Vec::new(),
    };
    for (node, t) in nodes {
        let h = index.extract_history(node, t, len);
        for (e, &m) in h.entries.iter().zip(&h.mask) {
            s.partners.push(e.partner);
            s.edges.push(e.edge_text);
            s.delta_t.push(if m { t - e.timestamp } else { 0.0 });
            s.mask.push(m);
        }
    }
    s
}

impl BehavioralBatch {
    /// Extracts both sides' histories strictly before each query time.
    pub fn build(index: &HistoryIndex, queries: &[PairQuery], history_len: usize) -> Self {
        Self {
            src_side: side(index, queries.iter().map(|q| (q.src, q.time)), history_len),
            dst_side: side(index, queries.iter().map(|q| (q.dst, q.time)), history_len),
            queries: queries.to_vec(),
            history_len,
        }
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Checks shape, strict causality at valid slots and zeroed padding.
    pub fn validate(&self) -> Result<()> {
        let expect = self.len() * self.history_len;
        for (name, s) in [("source", &self.src_side), ("destination", &self.dst_side)] {
            for len in [s.partners.len(), s.edges.len(), s.delta_t.len(), s.mask.len()] {
                if len != expect {
                    return Err(Error::Dimension {
                        op: "behavioral batch",
                        axis: format!("{name} side slots"),
                        expected: expect,
                        found: len,
                    });
                }
            }
            for (slot, (&dt, &m)) in s.delta_t.iter().zip(&s.mask).enumerate() {
                if m && (dt.is_nan() || dt <= 0.0) {
                    return Err(Error::Causality(format!(
                        "{name} side of pair {} has history slot {} with Δt = {dt}",
                        slot / self.history_len,
                        slot % self.history_len
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InteractionEvent;

    #[test]
    fn padded_slots_are_zero_and_dt_positive() {
        let mut idx = HistoryIndex::empty(3);
        for (i, t) in [1.0, 2.0].into_iter().enumerate() {
            idx.push(&InteractionEvent {
                src: 0,
                dst: 1,
                edge_text: i,
                timestamp: t,
            });
        }
        let q = PairQuery {
            src: 0,
            dst: 2,
            time: 2.5,
        };
        let b = BehavioralBatch::build(&idx, &[q], 3);
        b.validate().unwrap();
        assert_eq!(b.src_side.mask, vec![false, true, true]);
        assert_eq!(b.src_side.delta_t, vec![0.0, 1.5, 0.5]);
        assert_eq!(b.dst_side.mask, vec![false; 3]);
        assert!(b.src_side.non_empty(0, 3));
        assert!(!b.dst_side.non_empty(0, 3));
    }

    #[test]
    fn non_positive_dt_is_causality_error() {
        let mut idx = HistoryIndex::empty(2);
        idx.push(&InteractionEvent {
            src: 0,
            dst: 1,
            edge_text: 0,
            timestamp: 1.0,
        });
        let mut b = BehavioralBatch::build(
            &idx,
            &[PairQuery {
                src: 0,
                dst: 1,
                time: 2.0,
            }],
            1,
        );
        b.src_side.delta_t[0] = -1.0;
        assert!(matches!(b.validate(), Err(Error::Causality(_))));
    }
}
