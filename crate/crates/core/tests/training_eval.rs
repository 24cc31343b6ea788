mod common;

use common::{features, small_config};
use prism_core::data::{chronological_split, generate_synthetic, HistoryIndex, Setting, Split, SyntheticConfig};
use prism_core::evaluation::{
    evaluate_link_prediction, evaluate_retrieval, EvalContext, ModelScorer, PairScorer,
};
use prism_core::model::{PairQuery, PrismModel};
use prism_core::objectives::ObjectiveWeights;
use prism_core::rng::Rng;
use prism_core::training::{train, Ablation, TrainConfig, TrainData, TrainReport};
use prism_core::Result;

struct Constant;

impl PairScorer for Constant {
    fn score(&self, _: &HistoryIndex, queries: &[PairQuery]) -> Result<Vec<f64>> {
        Ok(vec![0.5; queries.len()])
    }
}

/// Serialized form, which leaves out wall-clock timings.
fn json(r: &TrainReport) -> String {
    serde_json::to_string(r).unwrap()
}

fn train_config(epochs: usize, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        lr,
        seed,
        early_stop_patience: epochs.max(1),
        ..TrainConfig::default()
    }
}

#[test]
fn uninformative_scores_give_chance_metrics() {
    let ds = generate_synthetic(&SyntheticConfig::new(40, 600, 4, 0.5, 3)).unwrap();
    let splits = chronological_split(&ds, [0.7, 0.15, 0.15]).unwrap();
    let ctx = EvalContext::new(&ds, &splits);

    let r = evaluate_link_prediction(&Constant, &ctx, Split::Test, Setting::Transductive, 0).unwrap();
    assert_eq!(r.auc, Some(0.5));
    assert_eq!(r.ap, Some(0.5));

    // A fresh model's decoder output layer is zero, so every score is σ(0).
    let feats = features(&ds);
    let model = PrismModel::new(small_config(2), feats.dim(), &Rng::new(0)).unwrap();
    let scorer = ModelScorer {
        model: &model,
        features: &feats,
    };
    let r = evaluate_link_prediction(&scorer, &ctx, Split::Test, Setting::Transductive, 0).unwrap();
    assert_eq!(r.auc, Some(0.5));

    // With two candidates and all-tied scores the truth wins half the time.
    let r = evaluate_retrieval(&Constant, &ctx, Split::Test, Setting::Transductive, 2, &[1], 0).unwrap();
    let n = r.n_queries as f64;
    let sigma = (0.25 / n).sqrt();
    let h1 = r.hit(1).unwrap();
    assert!((h1 - 0.5).abs() <= 3.0 * sigma, "hits@1 {h1} over {n} queries");
    let r = evaluate_retrieval(&Constant, &ctx, Split::Test, Setting::Transductive, 2, &[2], 0).unwrap();
    assert_eq!(r.hit(2), Some(1.0));
}

#[test]
fn settings_cover_each_split() {
    let ds = generate_synthetic(&SyntheticConfig::new(60, 300, 3, 0.3, 8)).unwrap();
    let splits = chronological_split(&ds, [0.7, 0.15, 0.15]).unwrap();
    let ctx = EvalContext::new(&ds, &splits);
    for split in [Split::Val, Split::Test] {
        let t = evaluate_link_prediction(&Constant, &ctx, split, Setting::Transductive, 1).unwrap();
        let i = evaluate_link_prediction(&Constant, &ctx, split, Setting::Inductive, 1).unwrap();
        assert_eq!(t.n_queries + i.n_queries, splits.range(split).len());
    }
}

#[test]
fn evaluation_is_read_only_and_repeatable() {
    let ds = generate_synthetic(&SyntheticConfig::new(20, 200, 2, 0.7, 4)).unwrap();
    let splits = chronological_split(&ds, [0.7, 0.15, 0.15]).unwrap();
    let feats = features(&ds);
    let model = common::perturbed_model(small_config(2), feats.dim(), 4);
    let before = model.params.checksum();
    let ctx = EvalContext::new(&ds, &splits);
    let scorer = ModelScorer {
        model: &model,
        features: &feats,
    };
    let a = evaluate_link_prediction(&scorer, &ctx, Split::Test, Setting::Transductive, 9).unwrap();
    let b = evaluate_link_prediction(&scorer, &ctx, Split::Test, Setting::Transductive, 9).unwrap();
    let r = evaluate_retrieval(&scorer, &ctx, Split::Test, Setting::Transductive, 5, &[1, 3], 9).unwrap();
    assert_eq!(a, b);
    assert!(r.hit(1).unwrap() <= r.hit(3).unwrap());
    assert_eq!(model.params.checksum(), before);
}

#[test]
fn training_behaviour() {
    let ds = generate_synthetic(&SyntheticConfig::new(20, 240, 2, 0.8, 6)).unwrap();
    let splits = chronological_split(&ds, [0.7, 0.15, 0.15]).unwrap();
    let feats = features(&ds);
    let data = TrainData {
        dataset: &ds,
        splits: &splits,
        features: &feats,
    };
    let model_cfg = small_config(2);
    let weights = ObjectiveWeights::default();

    // A zero learning rate never moves the parameters.
    let frozen = train(data, &model_cfg, &weights, &train_config(2, 0.0, 1)).unwrap();
    let init = PrismModel::new(model_cfg.clone(), feats.dim(), &Rng::new(1)).unwrap();
    assert_eq!(frozen.last.params, init.params);
    assert!(frozen.report.optimizer_steps > 0);

    // Identical configuration, identical run.
    let cfg = train_config(20, 3e-3, 2);
    let a = train(data, &model_cfg, &weights, &cfg).unwrap();
    let b = train(data, &model_cfg, &weights, &cfg).unwrap();
    assert_eq!(json(&a.report), json(&b.report));
    assert_eq!(a.log_csv(), b.log_csv());
    assert_eq!(a.best.params, b.best.params);

    // The epoch-mean loss goes down.
    let first = a.report.epochs.first().unwrap().total;
    let last = a.report.epochs.last().unwrap().total;
    assert_eq!(a.report.epochs.len(), 20);
    assert!(last < first, "{first} -> {last}");

    // The best model is the one with the best validation AP.
    let best = a
        .report
        .epochs
        .iter()
        .filter_map(|e| e.val_ap)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.report.best_val_ap, Some(best));
}

#[test]
fn removing_recon_equals_zero_weight() {
    let ds = generate_synthetic(&SyntheticConfig::new(16, 160, 2, 0.8, 2)).unwrap();
    let splits = chronological_split(&ds, [0.7, 0.15, 0.15]).unwrap();
    let feats = features(&ds);
    let data = TrainData {
        dataset: &ds,
        splits: &splits,
        features: &feats,
    };
    let model_cfg = small_config(2);
    let ablated = train(
        data,
        &model_cfg,
        &ObjectiveWeights::default(),
        &TrainConfig {
            ablation: Ablation::WoRecon,
            ..train_config(3, 3e-3, 0)
        },
    )
    .unwrap();
    let zeroed = train(
        data,
        &model_cfg,
        &ObjectiveWeights {
            lambda_recon: 0.0,
            ..ObjectiveWeights::default()
        },
        &train_config(3, 3e-3, 0),
    )
    .unwrap();
    assert_eq!(json(&ablated.report), json(&zeroed.report));
    assert_eq!(ablated.last.params, zeroed.last.params);
}
