//! Metric kernels and the evaluation protocol.

mod metrics;
mod protocol;

pub use metrics::{average_precision, hits_at_k, rank_of_truth, roc_auc, tie_key, RankingResult, ScoredPair};
pub use protocol::{
    evaluate_link_prediction, evaluate_retrieval, link_scores, retrieval_ranks, EvalContext, EvalReport, ModelScorer,
    PairScorer, Task, DEFAULT_HITS_K, DEFAULT_POOL_SIZE, EVAL_CHUNK,
};
