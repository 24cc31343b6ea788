//! Named parameter storage and the block layout of the model.

use super::config::PrismConfig;
use crate::autodiff::{DenseVars, EncoderLayerVars, FfnVars, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseIdx {
    pub w: usize,
    pub b: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FfnIdx {
    pub hidden: DenseIdx,
    pub out: DenseIdx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderIdx {
    pub norm1_gain: usize,
    pub norm1_bias: usize,
    pub query: DenseIdx,
    pub key: DenseIdx,
    pub value: DenseIdx,
    pub output: DenseIdx,
    pub norm2_gain: usize,
    pub norm2_bias: usize,
    pub ffn: FfnIdx,
}

/// Parameters owned by one refinement step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepIdx {
    /// Query projection of `[z ‖ s]`, no bias.
    pub query: usize,
    pub key: DenseIdx,
    pub value: DenseIdx,
    pub output: DenseIdx,
    pub velocity: FfnIdx,
}

/// Positions of every parameter block inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub node_text_proj: FfnIdx,
    pub edge_text_proj: FfnIdx,
    pub token_proj: FfnIdx,
    pub time_freq: usize,
    pub time_phase: usize,
    pub encoder: Vec<EncoderIdx>,
    pub final_norm_gain: usize,
    pub final_norm_bias: usize,
    pub steps: Vec<StepIdx>,
    pub decoder: FfnIdx,
    pub recon: FfnIdx,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    /// Order-sensitive FNV-1a checksum over the raw bits of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tensors {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

#[derive(Clone, Copy)]
enum Init {
    Xavier,
    Zeros,
    Ones,
    TimeLadder,
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut Rng,
}

impl Builder<'_> {
    fn push(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let numel: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; numel],
            Init::Ones => vec![1.0; numel],
            Init::Xavier => {
                let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..numel).map(|_| (2.0 * self.rng.uniform() - 1.0) * a).collect()
            }
            Init::TimeLadder => (0..numel)
                .map(|j| 1.0 / 10f64.powf(2.0 * j as f64 / numel as f64))
                .collect(),
        };
        self.store.names.push(name);
        self.store
            .tensors
            .push(Tensor::new(shape.to_vec(), data).expect("init shape"));
        self.store.tensors.len() - 1
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool, zero: bool) -> DenseIdx {
        let init = if zero { Init::Zeros } else { Init::Xavier };
        let w = self.push(format!("{name}.w"), &[fan_in, fan_out], init);
        let b = bias.then(|| self.push(format!("{name}.b"), &[fan_out], Init::Zeros));
        DenseIdx { w, b }
    }

    fn ffn(&mut self, name: &str, input: usize, hidden: usize, out: usize, zero_out: bool) -> FfnIdx {
        FfnIdx {
            hidden: self.dense(&format!("{name}.hidden"), input, hidden, true, false),
            out: self.dense(&format!("{name}.out"), hidden, out, true, zero_out),
        }
    }
}

/// Allocates and initializes every block for `cfg`.
///
/// Weights are Xavier-uniform, biases zero, layer-norm gains one. The final
/// layers of the velocity networks and of the decoder start at zero, so an
/// untrained model keeps `z = s` and predicts 0.5 everywhere.
pub fn init_params(cfg: &PrismConfig, text_dim: usize, rng: &mut Rng) -> (ParamStore, Layout) {
    let d = cfg.d;
    let mut b = Builder {
        store: ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        },
        rng,
    };
    let node_text_proj = b.ffn("node_text_proj", text_dim, d, d, false);
    let edge_text_proj = b.ffn("edge_text_proj", text_dim, d, d, false);
    let token_proj = b.ffn("token_proj", 2 * d + cfg.d_time, d, d, false);
    let time_freq = b.push("time_enc.freq".into(), &[cfg.d_time], Init::TimeLadder);
    let time_phase = b.push("time_enc.phase".into(), &[cfg.d_time], Init::Zeros);
    let encoder = (0..cfg.enc_layers)
        .map(|l| {
            let p = format!("encoder.{l}");
            EncoderIdx {
                norm1_gain: b.push(format!("{p}.norm1.gain"), &[d], Init::Ones),
                norm1_bias: b.push(format!("{p}.norm1.bias"), &[d], Init::Zeros),
                query: b.dense(&format!("{p}.attn.query"), d, d, true, false),
                key: b.dense(&format!("{p}.attn.key"), d, d, true, false),
                value: b.dense(&format!("{p}.attn.value"), d, d, true, false),
                output: b.dense(&format!("{p}.attn.output"), d, d, true, false),
                norm2_gain: b.push(format!("{p}.norm2.gain"), &[d], Init::Ones),
                norm2_bias: b.push(format!("{p}.norm2.bias"), &[d], Init::Zeros),
                ffn: b.ffn(&format!("{p}.ffn"), d, d, d, false),
            }
        })
        .collect();
    let final_norm_gain = b.push("encoder.final_norm.gain".into(), &[d], Init::Ones);
    let final_norm_bias = b.push("encoder.final_norm.bias".into(), &[d], Init::Zeros);
    let steps = (0..cfg.steps)
        .map(|k| {
            let p = format!("refine.{k}");
            StepIdx {
                query: b.dense(&format!("{p}.query"), 2 * d, d, false, false).w,
                key: b.dense(&format!("{p}.key"), d, d, true, false),
                value: b.dense(&format!("{p}.value"), d, d, true, false),
                output: b.dense(&format!("{p}.output"), d, d, true, false),
                velocity: b.ffn(&format!("{p}.velocity"), 4 * d, d, d, true),
            }
        })
        .collect();
    let decoder = b.ffn("decoder", 2 * d, 2 * d, 1, true);
    let recon = b.ffn("recon", d, d, d, false);
    let layout = Layout {
        node_text_proj,
        edge_text_proj,
        token_proj,
        time_freq,
        time_phase,
        encoder,
        final_norm_gain,
        final_norm_bias,
        steps,
        decoder,
        recon,
    };
    (b.store, layout)
}

/// Tape handles for every block, mirroring [`Layout`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub node_text_proj: FfnVars,
    pub edge_text_proj: FfnVars,
    pub token_proj: FfnVars,
    pub time_freq: Var,
    pub time_phase: Var,
    pub encoder: Vec<EncoderLayerVars>,
    pub final_norm_gain: Var,
    pub final_norm_bias: Var,
    pub steps: Vec<StepVars>,
    pub decoder: FfnVars,
    pub recon: FfnVars,
}

#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub query: Var,
    pub key: DenseVars,
    pub value: DenseVars,
    pub output: DenseVars,
    pub velocity: FfnVars,
}

impl Layout {
    /// Maps block indices onto the handles in `vars` (one per store entry).
    pub fn bind(&self, vars: &[Var]) -> Result<ModelVars> {
        let max = self.max_index();
        if vars.len() <= max {
            return Err(Error::Dimension {
                op: "bind",
                axis: "parameter blocks".into(),
                expected: max + 1,
                found: vars.len(),
            });
        }
        let dense = |i: DenseIdx| DenseVars {
            w: vars[i.w],
            b: i.b.map(|b| vars[b]),
        };
        let ffn = |i: FfnIdx| FfnVars {
            hidden: dense(i.hidden),
            out: dense(i.out),
        };
        Ok(ModelVars {
            node_text_proj: ffn(self.node_text_proj),
            edge_text_proj: ffn(self.edge_text_proj),
            token_proj: ffn(self.token_proj),
            time_freq: vars[self.time_freq],
            time_phase: vars[self.time_phase],
            encoder: self
                .encoder
                .iter()
                .map(|e| EncoderLayerVars {
                    norm1_gain: vars[e.norm1_gain],
                    norm1_bias: vars[e.norm1_bias],
                    query: dense(e.query),
                    key: dense(e.key),
                    value: dense(e.value),
                    output: dense(e.output),
                    norm2_gain: vars[e.norm2_gain],
                    norm2_bias: vars[e.norm2_bias],
                    ffn: ffn(e.ffn),
                })
                .collect(),
            final_norm_gain: vars[self.final_norm_gain],
            final_norm_bias: vars[self.final_norm_bias],
            steps: self
                .steps
                .iter()
                .map(|s| StepVars {
                    query: vars[s.query],
                    key: dense(s.key),
                    value: dense(s.value),
                    output: dense(s.output),
                    velocity: ffn(s.velocity),
                })
                .collect(),
            decoder: ffn(self.decoder),
            recon: ffn(self.recon),
        })
    }

    fn max_index(&self) -> usize {
        self.recon.out.b.unwrap_or(self.recon.out.w)
    }

    /// Store indices of the blocks in the behavioral encoder: token
    /// projection, edge projection, time encoding and transformer layers.
    pub fn behavior_encoder_blocks(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let dense = |d: DenseIdx, out: &mut Vec<usize>| {
            out.push(d.w);
            out.extend(d.b);
        };
        for f in [self.edge_text_proj, self.token_proj] {
            dense(f.hidden, &mut out);
            dense(f.out, &mut out);
        }
        out.push(self.time_freq);
        out.push(self.time_phase);
        for e in &self.encoder {
            out.extend([e.norm1_gain, e.norm1_bias, e.norm2_gain, e.norm2_bias]);
            for d in [e.query, e.key, e.value, e.output, e.ffn.hidden, e.ffn.out] {
                dense(d, &mut out);
            }
        }
        out.extend([self.final_norm_gain, self.final_norm_bias]);
        out
    }

    /// Store indices owned by refinement step `k`.
    pub fn step_blocks(&self, k: usize) -> Vec<usize> {
        let s = &self.steps[k];
        let mut out = vec![s.query];
        for d in [s.key, s.value, s.output, s.velocity.hidden, s.velocity.out] {
            out.push(d.w);
            out.extend(d.b);
        }
        out
    }
}
