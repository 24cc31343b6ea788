mod common;

use common::{dataset, features, perturbed_model, small_config};
use prism_core::autodiff::{Tape, Tensor};
use prism_core::data::{HistoryIndex, InteractionEvent};
use prism_core::embedding::TextFeatures;
use prism_core::model::checkpoint::{checkpoint_bytes, checkpoint_from_bytes};
use prism_core::model::{load_checkpoint_for, save_checkpoint, BehavioralBatch, PairQuery, PrismConfig, PrismModel};
use prism_core::rng::Rng;
use prism_core::Error;

struct Pass {
    scores: Tensor,
    prior: Tensor,
    states: Vec<Tensor>,
}

fn run(model: &PrismModel, feats: &TextFeatures, batch: &BehavioralBatch) -> Pass {
    let mut tape = Tape::new();
    let consts = model.constants(&mut tape);
    let vars = model.bind(&consts).unwrap();
    let pass = model.forward(&mut tape, &vars, feats, batch).unwrap();
    Pass {
        scores: tape.value(pass.scores).clone(),
        prior: tape.value(pass.prior).clone(),
        states: pass.states.iter().map(|&s| tape.value(s).clone()).collect(),
    }
}

/// Queries at the timestamps of the last `n` events, so most endpoints have
/// earlier interactions.
fn late_queries(ds: &prism_core::data::DyTagDataset, n: usize) -> Vec<PairQuery> {
    ds.events()[ds.num_events() - n..]
        .iter()
        .map(|e| PairQuery {
            src: e.src,
            dst: e.dst,
            time: e.timestamp,
        })
        .collect()
}

fn set_block(model: &mut PrismModel, name: &str, f: impl Fn(usize) -> f64) {
    let t = model.params.get_mut(name).unwrap_or_else(|| panic!("no block {name}"));
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

#[test]
fn zero_velocity_keeps_prior_bit_exact() {
    let ds = dataset(1);
    let feats = features(&ds);
    let index = HistoryIndex::build_all(&ds);
    let queries = late_queries(&ds, 10);
    for k in [1, 2, 4] {
        let cfg = small_config(k);
        let batch = BehavioralBatch::build(&index, &queries, cfg.history_len);

        // Freshly initialized: the velocity output layers start at zero.
        let fresh = PrismModel::new(cfg.clone(), feats.dim(), &Rng::new(k as u64)).unwrap();
        let p = run(&fresh, &feats, &batch);
        assert!(p.states[k].bit_eq(&p.prior), "fresh model, K={k}");

        // Everything else perturbed, velocity output layers zeroed again.
        let mut m = perturbed_model(cfg, feats.dim(), 7);
        for s in 0..k {
            set_block(&mut m, &format!("refine.{s}.velocity.out.w"), |_| 0.0);
            set_block(&mut m, &format!("refine.{s}.velocity.out.b"), |_| 0.0);
        }
        let p = run(&m, &feats, &batch);
        assert!(p.states[k].bit_eq(&p.prior), "perturbed model, K={k}");
    }
}

#[test]
fn constant_velocity_accumulates_one_unit() {
    let ds = dataset(2);
    let feats = features(&ds);
    let index = HistoryIndex::build_all(&ds);
    let queries = late_queries(&ds, 8);
    for k in [1, 2, 3, 4, 7] {
        let cfg = small_config(k);
        let d = cfg.d;
        let batch = BehavioralBatch::build(&index, &queries, cfg.history_len);
        let mut m = perturbed_model(cfg, feats.dim(), 3);
        let v: Vec<f64> = (0..d).map(|j| 0.37 * j as f64 - 1.1).collect();
        for s in 0..k {
            set_block(&mut m, &format!("refine.{s}.velocity.out.w"), |_| 0.0);
            set_block(&mut m, &format!("refine.{s}.velocity.out.b"), |j| v[j]);
        }
        let p = run(&m, &feats, &batch);
        let (z, s) = (&p.states[k], &p.prior);
        for r in 0..z.rows() {
            for (j, ((zj, sj), vj)) in z.row(r).iter().zip(s.row(r)).zip(&v).enumerate() {
                assert!((zj - (sj + vj)).abs() <= 1e-12, "K={k} row {r} col {j}");
            }
        }
    }
}

#[test]
fn appending_future_events_changes_nothing_earlier() {
    let ds = dataset(3);
    let feats = features(&ds);
    let model = perturbed_model(small_config(2), feats.dim(), 5);
    let queries = late_queries(&ds, 20);
    let last = ds.events().last().unwrap().timestamp;
    let future: Vec<InteractionEvent> = (0..15)
        .map(|i| InteractionEvent {
            src: (3 * i) % ds.num_nodes(),
            dst: (7 * i + 1) % ds.num_nodes(),
            edge_text: i % ds.num_edge_texts(),
            timestamp: last + 1.0 + i as f64,
        })
        .collect();
    let extended = ds.with_appended(&future).unwrap();

    let before = model.score_pairs(&feats, &HistoryIndex::build_all(&ds), &queries).unwrap();
    let after = model
        .score_pairs(&feats, &HistoryIndex::build_all(&extended), &queries)
        .unwrap();
    assert_eq!(
        before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        after.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn padded_slots_do_not_matter() {
    let ds = dataset(4);
    let feats = features(&ds);
    let cfg = PrismConfig {
        history_len: 12,
        ..small_config(3)
    };
    let model = perturbed_model(cfg.clone(), feats.dim(), 9);
    // Early queries have short histories, so most slots are padding.
    let queries: Vec<PairQuery> = ds.events()[5..25]
        .iter()
        .map(|e| PairQuery {
            src: e.src,
            dst: e.dst,
            time: e.timestamp,
        })
        .collect();
    let index = HistoryIndex::build_all(&ds);
    let batch = BehavioralBatch::build(&index, &queries, cfg.history_len);
    assert!(batch.src_side.mask.iter().any(|m| !m));

    let mut noisy = batch.clone();
    let mut rng = Rng::new(99);
    for side in [&mut noisy.src_side, &mut noisy.dst_side] {
        for i in 0..side.mask.len() {
            if !side.mask[i] {
                side.partners[i] = rng.below(ds.num_nodes());
                side.edges[i] = rng.below(ds.num_edge_texts());
                side.delta_t[i] = 1.0 + 100.0 * rng.uniform();
            }
        }
    }
    let (a, b) = (run(&model, &feats, &batch), run(&model, &feats, &noisy));
    assert!(a.scores.bit_eq(&b.scores));
    for (x, y) in a.states.iter().zip(&b.states) {
        assert!(x.bit_eq(y));
    }
}

#[test]
fn later_steps_do_not_affect_earlier_states() {
    let ds = dataset(5);
    let feats = features(&ds);
    let index = HistoryIndex::build_all(&ds);
    let queries = late_queries(&ds, 10);
    let cfg = small_config(3);
    let batch = BehavioralBatch::build(&index, &queries, cfg.history_len);
    let base = perturbed_model(cfg, feats.dim(), 1);

    let mut changed = base.clone();
    let blocks = changed.layout.step_blocks(2);
    assert!(!blocks.is_empty());
    for &b in &blocks {
        for v in changed.params.tensors[b].data_mut() {
            *v += 0.5;
        }
    }
    // Step blocks are disjoint.
    for k in 0..2 {
        assert!(base.layout.step_blocks(k).iter().all(|b| !blocks.contains(b)));
    }

    let (a, b) = (run(&base, &feats, &batch), run(&changed, &feats, &batch));
    for k in 0..=2 {
        assert!(a.states[k].bit_eq(&b.states[k]), "state {k}");
    }
    assert!(a.states[3].max_abs_diff(&b.states[3]) > 0.0);
}

fn ffn(input: usize, hidden: usize, out: usize) -> usize {
    input * hidden + hidden + hidden * out + out
}

fn expected_params(c: &PrismConfig, text_dim: usize) -> usize {
    let d = c.d;
    let texts = 2 * ffn(text_dim, d, d);
    let tokens = ffn(2 * d + c.d_time, d, d);
    let time = 2 * c.d_time;
    let enc_layer = 2 * d + 4 * (d * d + d) + 2 * d + ffn(d, d, d);
    let final_norm = 2 * d;
    let step = 2 * d * d + 3 * (d * d + d) + ffn(4 * d, d, d);
    let decoder = ffn(2 * d, 2 * d, 1);
    let recon = ffn(d, d, d);
    texts + tokens + time + c.enc_layers * enc_layer + final_norm + c.steps * step + decoder + recon
}

#[test]
fn parameter_count_matches_formula() {
    let mut rng = Rng::new(17);
    for _ in 0..10 {
        let heads = 1 + rng.below(3);
        let cfg = PrismConfig {
            d: heads * (1 + rng.below(6)),
            d_time: 1 + rng.below(8),
            history_len: 1 + rng.below(10),
            steps: 1 + rng.below(5),
            heads,
            enc_layers: 1 + rng.below(3),
            ..PrismConfig::default()
        };
        let text_dim = 8 + rng.below(40);
        let model = PrismModel::new(cfg.clone(), text_dim, &rng).unwrap();
        assert_eq!(model.params.numel(), expected_params(&cfg, text_dim), "{cfg:?}");
    }
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let ds = dataset(6);
    let feats = features(&ds);
    let model = perturbed_model(small_config(2), feats.dim(), 4);
    let bytes = checkpoint_bytes(&model).unwrap();
    let back = checkpoint_from_bytes(&bytes).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.params.names, model.params.names);
    for (a, b) in back.params.tensors.iter().zip(&model.params.tensors) {
        assert!(a.bit_eq(b));
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let index = HistoryIndex::build_all(&ds);
    let q = late_queries(&ds, 6);
    let loaded = load_checkpoint_for(&path, feats.dim()).unwrap();
    assert_eq!(
        model.score_pairs(&feats, &index, &q).unwrap(),
        loaded.score_pairs(&feats, &index, &q).unwrap()
    );
    assert!(matches!(load_checkpoint_for(&path, feats.dim() + 1), Err(Error::Checkpoint(_))));
    assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 3]).is_err());
}

/// Queries placed after the last event: histories are fixed while the
/// elapsed time grows.
fn queries_at(pairs: &[(usize, usize)], time: f64) -> Vec<PairQuery> {
    pairs.iter().map(|&(src, dst)| PairQuery { src, dst, time }).collect()
}

#[test]
fn elapsed_time_reaches_the_score() {
    let ds = dataset(7);
    let feats = features(&ds);
    let index = HistoryIndex::build_all(&ds);
    let model = perturbed_model(small_config(2), feats.dim(), 8);
    let last = ds.events().last().unwrap().timestamp;
    let pairs = [(0, 1), (2, 5), (3, 4)];
    let a = model.score_pairs(&feats, &index, &queries_at(&pairs, last + 1.0)).unwrap();
    let b = model.score_pairs(&feats, &index, &queries_at(&pairs, last + 7.5)).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| x != y));

    let mut off = small_config(2);
    off.use_behavior = false;
    let model = perturbed_model(off, feats.dim(), 8);
    let a = model.score_pairs(&feats, &index, &queries_at(&pairs, last + 1.0)).unwrap();
    let b = model.score_pairs(&feats, &index, &queries_at(&pairs, last + 7.5)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn source_state_depends_on_the_candidate() {
    let ds = dataset(8);
    let feats = features(&ds);
    let index = HistoryIndex::build_all(&ds);
    let last = ds.events().last().unwrap().timestamp + 1.0;
    let queries = vec![
        PairQuery { src: 0, dst: 1, time: last },
        PairQuery { src: 0, dst: 2, time: last },
    ];
    let src_rows = |cfg: PrismConfig| {
        let model = perturbed_model(cfg.clone(), feats.dim(), 2);
        let batch = BehavioralBatch::build(&index, &queries, cfg.history_len);
        assert!(batch.dst_side.non_empty(0, cfg.history_len) && batch.dst_side.non_empty(1, cfg.history_len));
        let p = run(&model, &feats, &batch);
        let z = p.states.last().unwrap().clone();
        // Rows 0..n are source sides.
        (z.row(0).to_vec(), z.row(1).to_vec())
    };
    let (a, b) = src_rows(small_config(2));
    assert_ne!(a, b);

    let mut off = small_config(2);
    off.use_behavior = false;
    let (a, b) = src_rows(off);
    assert_eq!(a, b);
}
