//! Link-prediction and destination-retrieval drivers.
//!
//! Histories come from a streaming index over the whole dataset; extraction
//! is strictly before each query time, so a query sees every earlier event
//! regardless of split. Negatives and candidate pools are drawn from
//! per-event substreams, making them independent of filtering and of how
//! queries are spread over threads.

use super::metrics::{average_precision, hits_at_k, rank_of_truth, roc_auc, RankingResult, ScoredPair};
use crate::data::{
    build_candidate_pool, sample_negative, DatasetSplits, DyTagDataset, HistoryIndex, RetrievalQuery, Setting, Split,
};
use crate::embedding::TextFeatures;
use crate::error::Result;
use crate::model::{PairQuery, PrismModel};
use crate::rng::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

/// Pairs scored per forward pass.
pub const EVAL_CHUNK: usize = 64;

pub const DEFAULT_POOL_SIZE: usize = 100;
pub const DEFAULT_HITS_K: [usize; 3] = [1, 3, 10];

/// Anything that maps `(src, dst, t)` queries to scores.
pub trait PairScorer: Sync {
    fn score(&self, index: &HistoryIndex, queries: &[PairQuery]) -> Result<Vec<f64>>;
}

pub struct ModelScorer<'a> {
    pub model: &'a PrismModel,
    pub features: &'a TextFeatures,
}

impl PairScorer for ModelScorer<'_> {
    fn score(&self, index: &HistoryIndex, queries: &[PairQuery]) -> Result<Vec<f64>> {
        self.model.score_pairs(self.features, index, queries)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Link,
    Retrieval,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: Task,
    pub split: Split,
    pub setting: Setting,
    pub seed: u64,
    pub n_queries: usize,
    pub ap: Option<f64>,
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hits: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub config_echo: serde_json::Value,
}

impl EvalReport {
    /// `metric,K,value` rows; K is empty for AP/AUC.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("metric,K,value\n");
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        if self.task == Task::Link {
            out.push_str(&format!("ap,,{}\nauc,,{}\n", fmt(self.ap), fmt(self.auc)));
        }
        if let Some(h) = &self.hits {
            let mut ks: Vec<(usize, f64)> = h.iter().map(|(k, &v)| (k.parse().unwrap_or(0), v)).collect();
            ks.sort_by_key(|(k, _)| *k);
            for (k, v) in ks {
                out.push_str(&format!("hits,{k},{v}\n"));
            }
        }
        out
    }

    pub fn hit(&self, k: usize) -> Option<f64> {
        self.hits.as_ref().and_then(|h| h.get(&k.to_string()).copied())
    }
}

/// Shared inputs for evaluation over one dataset.
pub struct EvalContext<'a> {
    pub dataset: &'a DyTagDataset,
    pub splits: &'a DatasetSplits,
    pub index: HistoryIndex,
    pub universe: Vec<usize>,
}

impl<'a> EvalContext<'a> {
    pub fn new(dataset: &'a DyTagDataset, splits: &'a DatasetSplits) -> Self {
        Self {
            dataset,
            splits,
            index: HistoryIndex::build_all(dataset),
            universe: dataset.destination_universe(),
        }
    }
}

fn score_chunked(scorer: &dyn PairScorer, index: &HistoryIndex, queries: &[PairQuery]) -> Result<Vec<f64>> {
    let parts: Vec<Result<Vec<f64>>> = queries.par_chunks(EVAL_CHUNK).map(|c| scorer.score(index, c)).collect();
    let mut out = Vec::with_capacity(queries.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Scores of `positives` and of one sampled negative each, using the
/// per-event `"eval_negatives"` substream.
pub fn link_scores(
    scorer: &dyn PairScorer,
    ctx: &EvalContext<'_>,
    events: &[usize],
    seed: u64,
) -> Result<Vec<ScoredPair>> {
    let root = Rng::new(seed);
    let mut queries = Vec::with_capacity(2 * events.len());
    for &i in events {
        let e = ctx.dataset.events()[i];
        queries.push(PairQuery {
            src: e.src,
            dst: e.dst,
            time: e.timestamp,
        });
    }
    for &i in events {
        let e = ctx.dataset.events()[i];
        let mut rng = root.split_indexed("eval_negatives", i as u64);
        queries.push(PairQuery {
            src: e.src,
            dst: sample_negative(&mut rng, &e, &ctx.universe)?,
            time: e.timestamp,
        });
    }
    let scores = score_chunked(scorer, &ctx.index, &queries)?;
    let n = events.len();
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, &s)| ScoredPair::new(s, i < n))
        .collect())
}

pub fn evaluate_link_prediction(
    scorer: &dyn PairScorer,
    ctx: &EvalContext<'_>,
    split: Split,
    setting: Setting,
    seed: u64,
) -> Result<EvalReport> {
    let events = ctx.splits.filtered(ctx.dataset, split, setting);
    let (ap, auc) = if events.is_empty() {
        (None, None)
    } else {
        let pairs = link_scores(scorer, ctx, &events, seed)?;
        (Some(average_precision(&pairs)?), Some(roc_auc(&pairs)?))
    };
    Ok(EvalReport {
        task: Task::Link,
        split,
        setting,
        seed,
        n_queries: events.len(),
        ap,
        auc,
        hits: None,
        config_echo: serde_json::Value::Null,
    })
}

/// Ranks of the true destination, one per filtered event.
pub fn retrieval_ranks(
    scorer: &dyn PairScorer,
    ctx: &EvalContext<'_>,
    events: &[usize],
    pool_size: usize,
    seed: u64,
) -> Result<Vec<RankingResult>> {
    let root = Rng::new(seed);
    events
        .par_iter()
        .map(|&i| {
            let e = ctx.dataset.events()[i];
            let query = RetrievalQuery {
                src: e.src,
                timestamp: e.timestamp,
                true_dst: e.dst,
            };
            let mut rng = root.split_indexed("candidates", i as u64);
            let pool = build_candidate_pool(&mut rng, query, pool_size, &ctx.universe)?;
            let queries: Vec<PairQuery> = pool
                .candidates
                .iter()
                .map(|&c| PairQuery {
                    src: e.src,
                    dst: c,
                    time: e.timestamp,
                })
                .collect();
            let mut scores = Vec::with_capacity(queries.len());
            for chunk in queries.chunks(EVAL_CHUNK) {
                scores.extend(scorer.score(&ctx.index, chunk)?);
            }
            let scored: Vec<(usize, f64)> = pool.candidates.iter().copied().zip(scores).collect();
            rank_of_truth(&scored, e.dst, seed, i as u64)
        })
        .collect()
}

pub fn evaluate_retrieval(
    scorer: &dyn PairScorer,
    ctx: &EvalContext<'_>,
    split: Split,
    setting: Setting,
    pool_size: usize,
    ks: &[usize],
    seed: u64,
) -> Result<EvalReport> {
    let events = ctx.splits.filtered(ctx.dataset, split, setting);
    let ranks = retrieval_ranks(scorer, ctx, &events, pool_size, seed)?;
    let hits = (!events.is_empty()).then(|| ks.iter().map(|&k| (k.to_string(), hits_at_k(&ranks, k))).collect());
    Ok(EvalReport {
        task: Task::Retrieval,
        split,
        setting,
        seed,
        n_queries: events.len(),
        ap: None,
        auc: None,
        hits,
        config_echo: serde_json::Value::Null,
    })
}
