//! Composite layers built from tape primitives.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub w: Var,
    pub b: Option<Var>,
}

impl DenseVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.w, self.b)
    }
}

/// Two-layer feed-forward block: `dense -> gelu -> dense`.
#[derive(Clone, Copy, Debug)]
pub struct FfnVars {
    pub hidden: DenseVars,
    pub out: DenseVars,
}

impl FfnVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.hidden.apply(tape, x)?;
        let h = tape.gelu(h);
        self.out.apply(tape, h)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayerVars {
    pub norm1_gain: Var,
    pub norm1_bias: Var,
    pub query: DenseVars,
    pub key: DenseVars,
    pub value: DenseVars,
    pub output: DenseVars,
    pub norm2_gain: Var,
    pub norm2_bias: Var,
    pub ffn: FfnVars,
}

/// Pre-norm encoder layer over `x: [n, t, d]` with `mask: n * t`:
///
/// ```text
/// x1  = x  + Wo · MHA(LN1(x))
/// out = x1 + FFN(LN2(x1))
/// ```
///
/// Attention is bidirectional and mask-aware. Masked rows of the output are
/// exactly zero.
pub fn transformer_encoder_layer(
    tape: &mut Tape,
    x: Var,
    mask: &[bool],
    layer: &EncoderLayerVars,
    heads: usize,
) -> Result<Var> {
    let d = *tape.shape(x).last().unwrap_or(&0);
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "model dim {d} is not divisible by {heads} heads"
        )));
    }
    let h = tape.layer_norm(x, layer.norm1_gain, layer.norm1_bias)?;
    let q = layer.query.apply(tape, h)?;
    let k = layer.key.apply(tape, h)?;
    let v = layer.value.apply(tape, h)?;
    let a = tape.attention(q, k, v, mask, Some(mask), heads)?;
    let a = layer.output.apply(tape, a)?;
    let x1 = tape.add(x, a)?;
    let h2 = tape.layer_norm(x1, layer.norm2_gain, layer.norm2_bias)?;
    let f = layer.ffn.apply(tape, h2)?;
    let x2 = tape.add(x1, f)?;
    tape.mask_rows(x2, mask)
}
