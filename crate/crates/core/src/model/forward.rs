//! The forward computation: semantic priors, behavioral tokens, joint pair
//! encoding, K-step refinement and the link decoder.

use super::batch::{BehavioralBatch, PairQuery, SideHistory};
use super::config::PrismConfig;
use super::params::{init_params, Layout, ModelVars, ParamStore};
use crate::autodiff::{transformer_encoder_layer, Tape, Tensor, Var};
use crate::data::HistoryIndex;
use crate::embedding::TextFeatures;
use crate::error::{Error, Result};
use crate::rng::Rng;
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq)]
pub struct PrismModel {
    pub config: PrismConfig,
    pub text_dim: usize,
    pub params: ParamStore,
    pub layout: Layout,
}

/// Refinement trajectory of one node-time instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTrajectory {
    /// `z^(0..=K)`.
    pub states: Vec<Vec<f64>>,
    /// `Δz^(0..K)`.
    pub velocities: Vec<Vec<f64>>,
    /// Retrieved contexts `c^(0..K)`.
    pub contexts: Vec<Vec<f64>>,
}

/// Tape handles produced by [`PrismModel::forward`] for `n` pairs.
///
/// Per-instance tensors have `2n` rows: source sides first, then
/// destination sides, both in query order.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub n: usize,
    /// `[n, 1]` link probabilities.
    pub scores: Var,
    pub logits: Var,
    /// Semantic prior `s` as used by the refinement (zeros without semantics).
    pub prior: Var,
    /// Pooled behavior `b`; zero rows for empty histories.
    pub pooled: Var,
    pub states: Vec<Var>,
    pub velocities: Vec<Var>,
    pub contexts: Vec<Var>,
    /// Whether each instance had a non-empty history.
    pub non_empty: Vec<bool>,
}

impl ForwardPass {
    pub fn trajectory(&self, tape: &Tape, row: usize) -> PosteriorTrajectory {
        let pick = |vs: &[Var]| -> Vec<Vec<f64>> { vs.iter().map(|&v| tape.value(v).row(row).to_vec()).collect() };
        PosteriorTrajectory {
            states: pick(&self.states),
            velocities: pick(&self.velocities),
            contexts: pick(&self.contexts),
        }
    }

    pub fn final_state(&self) -> Var {
        *self.states.last().expect("at least the initial state")
    }
}

/// One Euler step `z + Δz / K`.
pub fn euler_update(tape: &mut Tape, z: Var, dz: Var, steps: usize) -> Result<Var> {
    let scaled = tape.div_scalar(dz, steps as f64);
    tape.add(z, scaled)
}

/// Dense lookup of the rows of `table` listed in `wanted` (sorted unique),
/// returning the row tensor and a map from table index to local row.
fn gather_rows(table: &Tensor, wanted: Vec<usize>) -> Result<(Tensor, BTreeMap<usize, usize>)> {
    let cols = table.cols();
    if wanted.is_empty() {
        return Ok((Tensor::zeros(&[1, cols]), BTreeMap::new()));
    }
    let mut data = Vec::with_capacity(wanted.len() * cols);
    let mut map = BTreeMap::new();
    for (local, &i) in wanted.iter().enumerate() {
        if i >= table.rows() {
            return Err(Error::Dimension {
                op: "feature lookup",
                axis: "row index".into(),
                expected: table.rows(),
                found: i,
            });
        }
        data.extend_from_slice(table.row(i));
        map.insert(i, local);
    }
    Ok((Tensor::new(vec![wanted.len(), cols], data)?, map))
}

impl PrismModel {
    /// Fresh model with parameters drawn from `rng`'s `"init"` substream.
    pub fn new(config: PrismConfig, text_dim: usize, rng: &Rng) -> Result<Self> {
        config.validate()?;
        if text_dim == 0 {
            return Err(Error::Config("text embedding dim must be positive".into()));
        }
        let (params, layout) = init_params(&config, text_dim, &mut rng.split("init"));
        Ok(Self {
            config,
            text_dim,
            params,
            layout,
        })
    }

    /// Registers every parameter as a differentiable leaf.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Registers every parameter as a constant (inference only).
    pub fn constants(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    pub fn bind(&self, vars: &[Var]) -> Result<ModelVars> {
        self.layout.bind(vars)
    }

    /// Adds `U(-scale, scale)` noise to every parameter entry, including the
    /// zero-initialized output layers. Used to probe gradients away from the
    /// degenerate initial point.
    pub fn perturb(&mut self, rng: &mut Rng, scale: f64) {
        for t in &mut self.params.tensors {
            for v in t.data_mut() {
                *v += (2.0 * rng.uniform() - 1.0) * scale;
            }
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        features: &TextFeatures,
        batch: &BehavioralBatch,
    ) -> Result<ForwardPass> {
        let cfg = &self.config;
        batch.validate()?;
        if batch.history_len != cfg.history_len {
            return Err(Error::Dimension {
                op: "forward",
                axis: "history length".into(),
                expected: cfg.history_len,
                found: batch.history_len,
            });
        }
        if features.dim() != self.text_dim {
            return Err(Error::Dimension {
                op: "forward",
                axis: "text embedding dim".into(),
                expected: self.text_dim,
                found: features.dim(),
            });
        }
        let (n, l, d) = (batch.len(), cfg.history_len, cfg.d);
        if n == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        let sides = [&batch.src_side, &batch.dst_side];

        // Semantic encoding for every node the batch touches.
        let mut wanted: Vec<usize> = batch.queries.iter().flat_map(|q| [q.src, q.dst]).collect();
        if cfg.use_behavior {
            for s in sides {
                wanted.extend(s.partners.iter().zip(&s.mask).filter(|(_, &m)| m).map(|(&p, _)| p));
            }
        }
        wanted.sort_unstable();
        wanted.dedup();
        let (node_rows, node_map) = gather_rows(&features.nodes, wanted)?;
        let node_in = tape.constant(node_rows);
        let sem = vars.node_text_proj.apply(tape, node_in)?;
        let own_idx: Vec<usize> = batch
            .queries
            .iter()
            .map(|q| node_map[&q.src])
            .chain(batch.queries.iter().map(|q| node_map[&q.dst]))
            .collect();
        let s_own = tape.gather(sem, &own_idx)?;
        let zeros = tape.constant(Tensor::zeros(&[2 * n, d]));
        let prior = if cfg.use_semantic { s_own } else { zeros };

        if !cfg.use_behavior {
            let z = prior;
            let (logits, scores) = self.decode(tape, vars, z, n)?;
            return Ok(ForwardPass {
                n,
                scores,
                logits,
                prior,
                pooled: zeros,
                states: vec![z],
                velocities: Vec::new(),
                contexts: Vec::new(),
                non_empty: vec![false; 2 * n],
            });
        }

        // Behavioral tokens for both sides, stacked source-first.
        let slot = |s: &SideHistory, i: usize| s.mask[i];
        let mut edge_wanted: Vec<usize> = sides
            .iter()
            .flat_map(|s| (0..s.mask.len()).filter(move |&i| slot(s, i)).map(move |i| s.edges[i]))
            .collect();
        edge_wanted.sort_unstable();
        edge_wanted.dedup();
        let (edge_rows, edge_map) = gather_rows(&features.edges, edge_wanted)?;
        let edge_in = tape.constant(edge_rows);
        let edge_sem = vars.edge_text_proj.apply(tape, edge_in)?;

        let mut partner_idx = Vec::with_capacity(2 * n * l);
        let mut edge_idx = Vec::with_capacity(2 * n * l);
        let mut delta_t = Vec::with_capacity(2 * n * l);
        let mut mask = Vec::with_capacity(2 * n * l);
        for s in sides {
            for i in 0..s.mask.len() {
                let m = s.mask[i];
                partner_idx.push(if m { node_map[&s.partners[i]] } else { 0 });
                edge_idx.push(if m { edge_map[&s.edges[i]] } else { 0 });
                delta_t.push(if m { s.delta_t[i] } else { 0.0 });
                mask.push(m);
            }
        }
        let partner_sem = tape.gather(sem, &partner_idx)?;
        let edge_tok = tape.gather(edge_sem, &edge_idx)?;
        let dt = tape.constant(Tensor::vector(delta_t));
        let phase = tape.outer_affine(dt, vars.time_freq, vars.time_phase)?;
        let time_enc = tape.cos(phase);
        let tok_in = tape.concat(&[partner_sem, edge_tok, time_enc], 1)?;
        let tokens = vars.token_proj.apply(tape, tok_in)?;
        let tokens = tape.mask_rows(tokens, &mask)?;

        // Joint encoding of [H_u ‖ H_v] per pair.
        let h_u = tape.slice(tokens, 0, 0, n * l)?;
        let h_v = tape.slice(tokens, 0, n * l, n * l)?;
        let h_u = tape.reshape(h_u, &[n, l, d])?;
        let h_v = tape.reshape(h_v, &[n, l, d])?;
        let mut x = tape.concat(&[h_u, h_v], 1)?;
        let (mask_u, mask_v) = mask.split_at(n * l);
        let joint_mask: Vec<bool> = (0..n)
            .flat_map(|i| {
                mask_u[i * l..(i + 1) * l]
                    .iter()
                    .chain(&mask_v[i * l..(i + 1) * l])
                    .copied()
            })
            .collect();
        for layer in &vars.encoder {
            x = transformer_encoder_layer(tape, x, &joint_mask, layer, cfg.heads)?;
        }
        let x = tape.layer_norm(x, vars.final_norm_gain, vars.final_norm_bias)?;
        let x = tape.mask_rows(x, &joint_mask)?;
        let b_u = tape.slice(x, 1, 0, l)?;
        let b_v = tape.slice(x, 1, l, l)?;
        let tokens_all = tape.concat(&[b_u, b_v], 0)?;
        let pooled = tape.masked_mean(tokens_all, &mask)?;
        let non_empty: Vec<bool> = (0..2 * n).map(|i| mask[i * l..(i + 1) * l].iter().any(|&m| m)).collect();

        // K-step refinement.
        let mut z = prior;
        let mut states = vec![z];
        let mut velocities = Vec::with_capacity(cfg.steps);
        let mut contexts = Vec::with_capacity(cfg.steps);
        for step in &vars.steps {
            let zs = tape.concat(&[z, prior], 1)?;
            let q = tape.matmul(zs, step.query)?;
            let q = tape.reshape(q, &[2 * n, 1, d])?;
            let keys = step.key.apply(tape, tokens_all)?;
            let values = step.value.apply(tape, tokens_all)?;
            let c = tape.attention(q, keys, values, &mask, None, cfg.heads)?;
            let c = tape.reshape(c, &[2 * n, d])?;
            let c = step.output.apply(tape, c)?;
            let c = tape.mask_rows(c, &non_empty)?;
            let v_in = tape.concat(&[z, prior, pooled, c], 1)?;
            let dz = step.velocity.apply(tape, v_in)?;
            z = euler_update(tape, z, dz, cfg.steps)?;
            states.push(z);
            velocities.push(dz);
            contexts.push(c);
        }

        let (logits, scores) = self.decode(tape, vars, z, n)?;
        Ok(ForwardPass {
            n,
            scores,
            logits,
            prior,
            pooled,
            states,
            velocities,
            contexts,
            non_empty,
        })
    }

    /// `σ(MLP([z_u ‖ z_v]))` from stacked states.
    fn decode(&self, tape: &mut Tape, vars: &ModelVars, z: Var, n: usize) -> Result<(Var, Var)> {
        let z_u = tape.slice(z, 0, 0, n)?;
        let z_v = tape.slice(z, 0, n, n)?;
        let (logits, scores) = decode_link(tape, vars, z_u, z_v)?;
        Ok((logits, scores))
    }

    /// Inference-only scores for `queries` with histories from `index`.
    pub fn score_pairs(&self, features: &TextFeatures, index: &HistoryIndex, queries: &[PairQuery]) -> Result<Vec<f64>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let batch = BehavioralBatch::build(index, queries, self.config.history_len);
        let mut tape = Tape::new();
        let vars = self.constants(&mut tape);
        let vars = self.bind(&vars)?;
        let out = self.forward(&mut tape, &vars, features, &batch)?;
        Ok(tape.value(out.scores).data().to_vec())
    }
}

/// Returns `(logits, σ(logits))` for `MLP([z_u ‖ z_v])`.
pub fn decode_link(tape: &mut Tape, vars: &ModelVars, z_u: Var, z_v: Var) -> Result<(Var, Var)> {
    let zz = tape.concat(&[z_u, z_v], 1)?;
    let logits = vars.decoder.apply(tape, zz)?;
    let scores = tape.sigmoid(logits);
    Ok((logits, scores))
}
