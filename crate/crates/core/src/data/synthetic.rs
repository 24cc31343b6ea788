//! Community/recency synthetic interaction streams.
//!
//! Nodes are assigned to communities round-robin. Each event draws a source
//! uniformly; with probability `recency_bias` the destination repeats one of
//! the source's `recent_window` most recent partners, otherwise it is drawn
//! uniformly from the source's community. Node texts carry the community as
//! repeated `topic_k` tokens plus a node-specific token; edge texts name the
//! community pair.

use super::dataset::{DyTagDataset, InteractionEvent};
use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

fn default_recent_window() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_nodes: usize,
    pub num_events: usize,
    pub num_communities: usize,
    pub recency_bias: f64,
    pub seed: u64,
    #[serde(default = "default_recent_window")]
    pub recent_window: usize,
}

impl SyntheticConfig {
    pub fn new(num_nodes: usize, num_events: usize, num_communities: usize, recency_bias: f64, seed: u64) -> Self {
        Self {
            num_nodes,
            num_events,
            num_communities,
            recency_bias,
            seed,
            recent_window: default_recent_window(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_communities == 0 {
            return Err(Error::Config("num_communities must be at least 1".into()));
        }
        if self.num_nodes < 2 * self.num_communities {
            return Err(Error::Config(format!(
                "num_nodes ({}) must be at least 2 * num_communities ({})",
                self.num_nodes, self.num_communities
            )));
        }
        if !(0.0..=1.0).contains(&self.recency_bias) {
            return Err(Error::Config(format!(
                "recency_bias {} outside [0, 1]",
                self.recency_bias
            )));
        }
        if self.num_events == 0 || self.recent_window == 0 {
            return Err(Error::Config("num_events and recent_window must be positive".into()));
        }
        Ok(())
    }
}

pub fn community_of(node: usize, num_communities: usize) -> usize {
    node % num_communities
}

pub fn node_text(node: usize, community: usize) -> String {
    format!("topic_{community} topic_{community} topic_{community} topic_{community} entity_{node}")
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<DyTagDataset> {
    cfg.validate()?;
    let c = cfg.num_communities;
    let members: Vec<Vec<usize>> = (0..c)
        .map(|k| (0..cfg.num_nodes).filter(|&n| community_of(n, c) == k).collect())
        .collect();

    let mut rng = Rng::new(cfg.seed).split("synthetic");
    let mut recent: Vec<VecDeque<usize>> = vec![VecDeque::new(); cfg.num_nodes];
    let mut events = Vec::with_capacity(cfg.num_events);
    let mut t = 0.0;
    for _ in 0..cfg.num_events {
        let src = rng.below(cfg.num_nodes);
        let repeat = rng.uniform() < cfg.recency_bias;
        let dst = if repeat && !recent[src].is_empty() {
            recent[src][rng.below(recent[src].len())]
        } else {
            let pool = &members[community_of(src, c)];
            let mut pick = pool[rng.below(pool.len() - 1)];
            if pick == src {
                pick = *pool.last().expect("community has at least two members");
            }
            pick
        };
        t += 0.5 + rng.uniform();
        events.push(InteractionEvent {
            src,
            dst,
            edge_text: community_of(src, c) * c + community_of(dst, c),
            timestamp: t,
        });
        for (a, b) in [(src, dst), (dst, src)] {
            let q = &mut recent[a];
            q.push_back(b);
            if q.len() > cfg.recent_window {
                q.pop_front();
            }
        }
    }

    let nodes = (0..cfg.num_nodes)
        .map(|n| (n as u64, node_text(n, community_of(n, c))))
        .collect();
    let edges = (0..c * c)
        .map(|i| (i as u64, format!("interaction topic_{} topic_{}", i / c, i % c)))
        .collect();
    DyTagDataset::new(events, nodes, edges)
}
