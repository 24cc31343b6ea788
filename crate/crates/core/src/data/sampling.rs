use super::dataset::InteractionEvent;
use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::seq::SliceRandom;

/// Uniform draw from `universe` (sorted, unique) excluding the positive's
/// destination.
pub fn sample_negative(rng: &mut Rng, positive: &InteractionEvent, universe: &[usize]) -> Result<usize> {
    let excluded = universe.binary_search(&positive.dst).ok();
    let available = universe.len() - usize::from(excluded.is_some());
    if available == 0 {
        return Err(Error::Sampling(format!(
            "no negative destination available besides node {}",
            positive.dst
        )));
    }
    let mut i = rng.below(available);
    if let Some(x) = excluded {
        if i >= x {
            i += 1;
        }
    }
    Ok(universe[i])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrievalQuery {
    pub src: usize,
    pub timestamp: f64,
    pub true_dst: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePool {
    pub query: RetrievalQuery,
    pub candidates: Vec<usize>,
}

/// The true destination plus `size - 1` distinct uniform negatives from
/// `universe`, in random order.
pub fn build_candidate_pool(rng: &mut Rng, query: RetrievalQuery, size: usize, universe: &[usize]) -> Result<CandidatePool> {
    if size == 0 || universe.len() < size {
        return Err(Error::Config(format!(
            "candidate pool size {size} exceeds universe of {} nodes",
            universe.len()
        )));
    }
    let others: Vec<usize> = universe.iter().copied().filter(|&v| v != query.true_dst).collect();
    if others.len() < size - 1 {
        return Err(Error::Config(format!(
            "only {} negatives available for a pool of {size}",
            others.len()
        )));
    }
    let mut candidates: Vec<usize> = rand::seq::index::sample(rng, others.len(), size - 1)
        .into_iter()
        .map(|i| others[i])
        .collect();
    candidates.push(query.true_dst);
    candidates.shuffle(rng);
    Ok(CandidatePool { query, candidates })
}
