use super::config::TrainConfig;
use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor};
use crate::data::{sample_negative, DatasetSplits, DyTagDataset, HistoryIndex, Setting, Split};
use crate::embedding::TextFeatures;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_link_prediction, EvalContext, ModelScorer};
use crate::model::{save_checkpoint, BehavioralBatch, PairQuery, PrismConfig, PrismModel};
use crate::objectives::{batch_objective, BatchLossReport, LossNorm, ObjectiveWeights};
use crate::rng::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::fs;
use std::path::Path;
use std::time::Instant;

/// Positive pairs per forward/backward pass. Batches are split into chunks
/// of this size, processed in parallel and summed in chunk order, so results
/// do not depend on the thread count.
pub const TRAIN_CHUNK: usize = 16;

pub const TRAIN_LOG_HEADER: &str = "step,task,recon,margin,step_reg,total";

/// Everything training reads besides configuration.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub dataset: &'a DyTagDataset,
    pub splits: &'a DatasetSplits,
    pub features: &'a TextFeatures,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task: f64,
    pub recon: f64,
    pub margin: f64,
    pub step: f64,
    pub total: f64,
    pub val_ap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_ap: Option<f64>,
    pub stopped_early: bool,
    pub optimizer_steps: u64,
    pub param_count: usize,
    /// Wall-clock seconds per epoch; kept out of serialized reports so they
    /// stay reproducible.
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
}

pub struct TrainOutcome {
    pub best: PrismModel,
    pub last: PrismModel,
    pub report: TrainReport,
    /// One row per optimizer step.
    pub log: Vec<BatchLossReport>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = format!("{TRAIN_LOG_HEADER}\n");
        for (i, r) in self.log.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i + 1,
                r.task,
                r.recon,
                r.margin,
                r.step,
                r.total
            ));
        }
        out
    }

    /// Writes `train_log.csv`, `best.ckpt` and `last.ckpt` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log_path = dir.join("train_log.csv");
        fs::write(&log_path, self.log_csv()).map_err(|e| Error::io(&log_path, e))?;
        save_checkpoint(&self.best, &dir.join("best.ckpt"))?;
        save_checkpoint(&self.last, &dir.join("last.ckpt"))
    }
}

/// Loss report and summed parameter gradients for one batch.
pub fn batch_gradients(
    model: &PrismModel,
    features: &TextFeatures,
    index: &HistoryIndex,
    positives: &[PairQuery],
    negatives: &[PairQuery],
    weights: &ObjectiveWeights,
) -> Result<(BatchLossReport, Vec<Tensor>)> {
    if positives.len() != negatives.len() || positives.is_empty() {
        return Err(Error::Config("a batch needs one negative per positive".into()));
    }
    let l = model.config.history_len;
    let chunks: Vec<BehavioralBatch> = positives
        .chunks(TRAIN_CHUNK)
        .zip(negatives.chunks(TRAIN_CHUNK))
        .map(|(p, n)| BehavioralBatch::build(index, &[p, n].concat(), l))
        .collect();
    let instances = if model.config.use_behavior {
        chunks.iter().map(|b| LossNorm::for_batch(b).instances).sum()
    } else {
        0
    };
    let norm = LossNorm {
        pairs: positives.len(),
        instances,
    };
    let parts: Vec<Result<([f64; 4], Vec<Tensor>)>> = chunks
        .par_iter()
        .map(|batch| {
            let mut tape = Tape::new();
            let leaves = model.leaves(&mut tape);
            let vars = model.bind(&leaves)?;
            let pass = model.forward(&mut tape, &vars, features, batch)?;
            let terms = batch_objective(&mut tape, &pass, &vars.recon, weights, norm)?;
            let grads = tape.backward(terms.total);
            let values = [terms.task, terms.recon, terms.margin, terms.step].map(|v| tape.value(v).item());
            Ok((values, leaves.iter().map(|&v| grads.wrt(v)).collect()))
        })
        .collect();

    let mut comp = [0.0; 4];
    let mut total: Option<Vec<Tensor>> = None;
    for part in parts {
        let (values, grads) = part?;
        for (c, v) in comp.iter_mut().zip(values) {
            *c += v;
        }
        match &mut total {
            None => total = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
        }
    }
    let report = BatchLossReport::from_components(comp[0], comp[1], comp[2], comp[3], instances, weights)?;
    Ok((report, total.expect("at least one chunk")))
}

fn validation_ap(model: &PrismModel, data: &TrainData<'_>, ctx: &EvalContext<'_>, seed: u64) -> Result<Option<f64>> {
    let scorer = ModelScorer {
        model,
        features: data.features,
    };
    Ok(evaluate_link_prediction(&scorer, ctx, Split::Val, Setting::Transductive, seed)?.ap)
}

fn epoch_mean(rows: &[BatchLossReport]) -> [f64; 5] {
    let n = rows.len().max(1) as f64;
    let mut acc = [0.0; 5];
    for r in rows {
        for (a, v) in acc.iter_mut().zip([r.task, r.recon, r.margin, r.step, r.total]) {
            *a += v;
        }
    }
    acc.map(|a| a / n)
}

/// Trains the configured variant.
///
/// Batches follow chronological order over the train range; each positive
/// gets a fresh negative per epoch from the `("negatives", epoch)` substream.
/// Histories come from train events only. Validation AP (transductive) is
/// computed every `eval_every` epochs and drives model selection and early
/// stopping.
pub fn train(
    data: TrainData<'_>,
    model_config: &PrismConfig,
    weights: &ObjectiveWeights,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (model_config, weights) = cfg.ablation.apply(model_config, weights);
    weights.validate()?;
    let root = Rng::new(cfg.seed);
    let mut model = PrismModel::new(model_config, data.features.dim(), &root)?;
    let train_range = data.splits.train.clone();
    if train_range.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let index = HistoryIndex::build(data.dataset, train_range.clone());
    let universe = data.dataset.destination_universe();
    let ctx = EvalContext::new(data.dataset, data.splits);
    let events = &data.dataset.events()[train_range];
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &model.params.tensors);

    let mut log = Vec::new();
    let mut records = Vec::new();
    let mut seconds = Vec::new();
    let mut best: Option<(PrismModel, usize, f64)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut neg_rng = root.split_indexed("negatives", epoch as u64);
        let mut epoch_rows = Vec::new();
        for batch in events.chunks(cfg.batch_size) {
            let positives: Vec<PairQuery> = batch
                .iter()
                .map(|e| PairQuery {
                    src: e.src,
                    dst: e.dst,
                    time: e.timestamp,
                })
                .collect();
            let negatives = batch
                .iter()
                .map(|e| {
                    Ok(PairQuery {
                        src: e.src,
                        dst: sample_negative(&mut neg_rng, e, &universe)?,
                        time: e.timestamp,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let step = log.len() + 1;
            let (report, grads) = batch_gradients(&model, data.features, &index, &positives, &negatives, &weights)
                .map_err(|e| match e {
                    Error::NonFinite { what } => Error::NonFinite {
                        what: format!("{what} at step {step}"),
                    },
                    other => other,
                })?;
            adam.step(&mut model.params.tensors, &grads, &model.params.names)?;
            log.push(report);
            epoch_rows.push(report);
        }

        let val_ap = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            validation_ap(&model, &data, &ctx, cfg.seed)?
        } else {
            None
        };
        let [task, recon, margin, step, total] = epoch_mean(&epoch_rows);
        records.push(EpochRecord {
            epoch,
            task,
            recon,
            margin,
            step,
            total,
            val_ap,
        });
        let secs = started.elapsed().as_secs_f64();
        seconds.push(secs);
        log::info!("epoch {epoch}: loss {total:.5} val_ap {val_ap:?} ({secs:.2}s)");

        if let Some(ap) = val_ap {
            if best.as_ref().is_none_or(|(_, _, b)| ap > *b) {
                best = Some((model.clone(), epoch, ap));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.early_stop_patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let last_epoch = records.len();
    let (best_model, best_epoch, best_val_ap) = match best {
        Some((m, e, ap)) => (m, e, Some(ap)),
        None => (model.clone(), last_epoch, None),
    };
    let report = TrainReport {
        epochs: records,
        best_epoch,
        best_val_ap,
        stopped_early,
        optimizer_steps: adam.step_count,
        param_count: model.params.numel(),
        epoch_seconds: seconds,
    };
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        report,
        log,
    })
}
