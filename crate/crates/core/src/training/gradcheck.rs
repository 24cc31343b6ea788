use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport, Tape};
use crate::data::{generate_synthetic, sample_negative, HistoryIndex, SyntheticConfig};
use crate::embedding::{embed_all, EmbeddingSource, HashingEmbedderConfig};
use crate::error::Result;
use crate::model::{BehavioralBatch, PairQuery, PrismConfig, PrismModel};
use crate::objectives::{batch_objective, LossNorm, ObjectiveWeights};
use crate::rng::Rng;

/// Events in the probed batch.
pub const GRAD_CHECK_EVENTS: usize = 4;

/// Noise added to every parameter so the zero-initialized output layers and
/// the refinement path carry non-trivial gradients.
pub const GRAD_CHECK_PERTURBATION: f64 = 0.1;

/// Checks the full training loss of a freshly initialized, perturbed model
/// against central differences over every parameter block.
///
/// The batch is the last four events of a small synthetic stream, with
/// histories from everything before them and one sampled negative each.
///
/// The reconstruction target is detached, so the differentiated function
/// treats it as a constant. Perturbed evaluations therefore reuse the pooled
/// evidence computed at the unperturbed parameters; otherwise finite
/// differences would pick up the path that stop-gradient removes.
pub fn check_model_gradients(
    config: &PrismConfig,
    weights: &ObjectiveWeights,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let root = Rng::new(seed);
    let ds = generate_synthetic(&SyntheticConfig::new(12, 48, 2, 0.6, seed))?;
    let features = embed_all(&ds, &EmbeddingSource::Hash(HashingEmbedderConfig { dim: 16, salt: seed }))?;
    let cut = ds.num_events() - GRAD_CHECK_EVENTS;
    let index = HistoryIndex::build(&ds, 0..cut);
    let universe = ds.destination_universe();

    let mut neg_rng = root.split("grad_check_negatives");
    let mut queries = Vec::with_capacity(2 * GRAD_CHECK_EVENTS);
    let batch_events = &ds.events()[cut..];
    for e in batch_events {
        queries.push(PairQuery {
            src: e.src,
            dst: e.dst,
            time: e.timestamp,
        });
    }
    for e in batch_events {
        queries.push(PairQuery {
            src: e.src,
            dst: sample_negative(&mut neg_rng, e, &universe)?,
            time: e.timestamp,
        });
    }
    let batch = BehavioralBatch::build(&index, &queries, config.history_len);
    let norm = LossNorm::for_batch(&batch);

    let mut model = PrismModel::new(config.clone(), features.dim(), &root)?;
    model.perturb(&mut root.split("grad_check_perturb"), GRAD_CHECK_PERTURBATION);

    let frozen_b = {
        let mut tape = Tape::new();
        let consts = model.constants(&mut tape);
        let vars = model.bind(&consts)?;
        let pass = model.forward(&mut tape, &vars, &features, &batch)?;
        tape.value(pass.pooled).clone()
    };

    grad_check(
        &model.params.names,
        &model.params.tensors,
        |tape, leaves| {
            let vars = model.bind(leaves)?;
            let mut pass = model.forward(tape, &vars, &features, &batch)?;
            pass.pooled = tape.constant(frozen_b.clone());
            Ok(batch_objective(tape, &pass, &vars.recon, weights, norm)?.total)
        },
        opts,
    )
}
