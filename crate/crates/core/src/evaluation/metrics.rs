//! Ranking metrics.
//!
//! Tied scores are handled as groups. AP takes, at each positive, the
//! precision over every item scoring at least as high as it (the usual
//! step-wise definition used by scikit-learn); AUC counts a tied
//! positive/negative pair as one half.

use crate::error::{Error, Result};
use crate::rng::splitmix64;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoredPair {
    pub score: f64,
    pub label: bool,
}

impl ScoredPair {
    pub fn new(score: f64, label: bool) -> Self {
        Self { score, label }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RankingResult {
    /// 1 is best.
    pub rank: usize,
    pub pool_size: usize,
}

fn check_finite(pairs: &[ScoredPair]) -> Result<()> {
    if pairs.iter().any(|p| !p.score.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite score".into()));
    }
    Ok(())
}

/// Indices sorted by descending score (ties in input order).
fn descending(pairs: &[ScoredPair]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.sort_by(|&a, &b| pairs[b].score.total_cmp(&pairs[a].score));
    idx
}

pub fn average_precision(pairs: &[ScoredPair]) -> Result<f64> {
    check_finite(pairs)?;
    let positives = pairs.iter().filter(|p| p.label).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("average precision needs at least one positive".into()));
    }
    let order = descending(pairs);
    let (mut seen, mut tp, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = pairs[order[i]].score;
        let mut group_tp = 0;
        let mut j = i;
        while j < order.len() && pairs[order[j]].score == s {
            group_tp += usize::from(pairs[order[j]].label);
            j += 1;
        }
        seen += j - i;
        tp += group_tp;
        ap += group_tp as f64 * tp as f64 / seen as f64;
        i = j;
    }
    Ok(ap / positives as f64)
}

/// Mann-Whitney form with midranks for ties.
pub fn roc_auc(pairs: &[ScoredPair]) -> Result<f64> {
    check_finite(pairs)?;
    let p = pairs.iter().filter(|x| x.label).count();
    let n = pairs.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric("ROC-AUC needs both positives and negatives".into()));
    }
    let mut order = descending(pairs);
    order.reverse();
    // Count, for each positive, negatives strictly below plus half the tied.
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let s = pairs[order[i]].score;
        let mut j = i;
        let (mut gp, mut gn) = (0usize, 0usize);
        while j < order.len() && pairs[order[j]].score == s {
            if pairs[order[j]].label {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        wins += gp as f64 * (neg_below as f64 + 0.5 * gn as f64);
        neg_below += gn;
        i = j;
    }
    Ok(wins / (p as f64 * n as f64))
}

/// Fraction of queries whose truth ranks within the top `k`; 0 for no
/// queries.
pub fn hits_at_k(results: &[RankingResult], k: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.rank <= k).count() as f64 / results.len() as f64
}

/// Deterministic tie-break key for candidate `node` of query `query`.
pub fn tie_key(seed: u64, query: u64, node: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(query)) ^ node)
}

/// Rank of `truth` among `(node, score)` candidates. Equal scores are
/// ordered by [`tie_key`], so the result does not depend on candidate order.
pub fn rank_of_truth(candidates: &[(usize, f64)], truth: usize, seed: u64, query: u64) -> Result<RankingResult> {
    let &(_, ts) = candidates
        .iter()
        .find(|(n, _)| *n == truth)
        .ok_or_else(|| Error::UndefinedMetric(format!("node {truth} is not in the candidate pool")))?;
    let tk = tie_key(seed, query, truth as u64);
    let ahead = candidates
        .iter()
        .filter(|&&(n, s)| n != truth && (s > ts || (s == ts && tie_key(seed, query, n as u64) < tk)))
        .count();
    Ok(RankingResult {
        rank: ahead + 1,
        pool_size: candidates.len(),
    })
}
