//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! Every primitive appends one node holding its output value plus whatever
//! it needs for the backward pass. `Tape::backward` walks the nodes once in
//! reverse order; nodes are created in execution order, so inputs always
//! precede their consumers.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale { x: Var, factor: f64 },
    DivScalar { x: Var, divisor: f64 },
    AddScalar(Var),
    Gelu(Var),
    Sigmoid(Var),
    Log(Var),
    Cos(Var),
    Relu(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    OuterAffine { t: Var, w: Var, b: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Attention(Box<AttentionCache>),
    MaskedMean { x: Var, mask: Vec<bool>, steps: usize },
    MaskRows { x: Var, keep: Vec<bool> },
    Gather { table: Var, idx: Vec<usize> },
    RowSqNorm(Var),
    Sum(Var),
    Mean(Var),
    StopGrad,
}

#[derive(Debug)]
struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    key_mask: Vec<bool>,
    probs: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient for `v`, zero-filled when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn shape_mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    if a.len() != b.len() {
        return Error::Dimension {
            op,
            axis: "rank".into(),
            expected: a.len(),
            found: b.len(),
        };
    }
    let axis = a.iter().zip(b).position(|(x, y)| x != y).unwrap_or(0);
    Error::Dimension {
        op,
        axis: axis.to_string(),
        expected: a[axis],
        found: b[axis],
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("unary shape");
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    /// Differentiable leaf (parameters and inputs under test).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// `a @ b` where `a` is `[.., k]` and `b` is `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() != 2 {
            return Err(Error::Dimension {
                op: "matmul",
                axis: "rank of rhs".into(),
                expected: 2,
                found: sb.len(),
            });
        }
        let av = self.value(a);
        let (m, k, n) = (av.rows(), av.cols(), sb[1]);
        if sa.is_empty() || k != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                axis: "inner (lhs last axis vs rhs axis 0)".into(),
                expected: sb[0],
                found: k,
            });
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b }, rg))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let bshape = self.shape(bias);
        if bshape.len() != 1 || bshape[0] != c {
            return Err(Error::Dimension {
                op: "add_bias",
                axis: "bias length vs last axis".into(),
                expected: c,
                found: bshape.iter().product(),
            });
        }
        let bd = self.data(bias);
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(bd) {
                *o += b;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::AddBias { x, bias }, rg))
    }

    /// `x @ w + bias`, bias broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_mismatch(name, sa, sb));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(sa.to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, Op::Scale { x, factor }, |v| v * factor)
    }

    pub fn div_scalar(&mut self, x: Var, divisor: f64) -> Var {
        self.unary(x, Op::DivScalar { x, divisor }, |v| v / divisor)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, Op::Cos(x), f64::cos)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.clamp(lo, hi))
    }

    /// Values unchanged; backward contributes nothing to `x`.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::StopGrad, false)
    }

    /// `out[.., j] = t[..] * w[j] + b[j]`; output gains a trailing axis of `w.len()`.
    pub fn outer_affine(&mut self, t: Var, w: Var, b: Var) -> Result<Var> {
        let (sw, sb) = (self.shape(w), self.shape(b));
        if sw.len() != 1 || sw != sb {
            return Err(shape_mismatch("outer_affine", sw, sb));
        }
        let dim = sw[0];
        let mut shape = self.shape(t).to_vec();
        shape.push(dim);
        let (td, wd, bd) = (self.data(t), self.data(w), self.data(b));
        let mut out = Vec::with_capacity(td.len() * dim);
        for &tv in td {
            out.extend(wd.iter().zip(bd).map(|(&wj, &bj)| tv * wj + bj));
        }
        let rg = self.rg(&[t, w, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::OuterAffine { t, w, b }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::Dimension {
                op: "concat",
                axis: "axis".into(),
                expected: first.len().saturating_sub(1),
                found: axis,
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len() {
                return Err(shape_mismatch("concat", &first, s));
            }
            for (ax, (&x, &y)) in first.iter().zip(s).enumerate() {
                if ax != axis && x != y {
                    return Err(Error::Dimension {
                        op: "concat",
                        axis: ax.to_string(),
                        expected: x,
                        found: y,
                    });
                }
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let block = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::Dimension {
                op: "slice",
                axis: axis.to_string(),
                expected: s.get(axis).copied().unwrap_or(0),
                found: start + len,
            });
        }
        let (outer, inner) = outer_inner(&s, axis);
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        for (name, p) in [("gain", gain), ("bias", bias)] {
            let s = self.shape(p);
            if s.len() != 1 || s[0] != c {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    axis: format!("{name} length vs last axis"),
                    expected: c,
                    found: s.iter().product(),
                });
            }
        }
        let (gd, bd) = (self.data(gain), self.data(bias));
        let rows = xv.rows();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(h * gd[j] + bd[j]);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention with key masking.
    ///
    /// `q` is `[n, tq, d]`, `k` and `v` are `[n, tk, d]`, `key_mask` is
    /// `n * tk` and `query_mask` (when given) is `n * tq`. Masked keys get
    /// exactly zero weight. A query row that is masked, or that has no valid
    /// key, outputs zeros.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        key_mask: &[bool],
        query_mask: Option<&[bool]>,
        heads: usize,
    ) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        if sq.len() != 3 {
            return Err(Error::Dimension {
                op: "attention",
                axis: "rank of query".into(),
                expected: 3,
                found: sq.len(),
            });
        }
        if sk != sv {
            return Err(shape_mismatch("attention", sk, sv));
        }
        if sk.len() != 3 || sk[0] != sq[0] || sk[2] != sq[2] {
            return Err(shape_mismatch("attention", &[sq[0], sk.get(1).copied().unwrap_or(0), sq[2]], sk));
        }
        let (n, tq, d, tk) = (sq[0], sq[1], sq[2], sk[1]);
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "model dim {d} is not divisible by {heads} heads"
            )));
        }
        if key_mask.len() != n * tk {
            return Err(Error::Dimension {
                op: "attention",
                axis: "key mask length".into(),
                expected: n * tk,
                found: key_mask.len(),
            });
        }
        if let Some(qm) = query_mask {
            if qm.len() != n * tq {
                return Err(Error::Dimension {
                    op: "attention",
                    axis: "query mask length".into(),
                    expected: n * tq,
                    found: qm.len(),
                });
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0; n * heads * tq * tk];
        let mut out = vec![0.0; n * tq * d];
        let mut scores = vec![0.0; tk];
        for b in 0..n {
            let km = &key_mask[b * tk..(b + 1) * tk];
            if !km.iter().any(|&m| m) {
                continue;
            }
            for i in 0..tq {
                if query_mask.is_some_and(|qm| !qm[b * tq + i]) {
                    continue;
                }
                for h in 0..heads {
                    let off = h * dh;
                    let qrow = &qd[(b * tq + i) * d + off..(b * tq + i) * d + off + dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..tk {
                        if !km[j] {
                            continue;
                        }
                        let krow = &kd[(b * tk + j) * d + off..(b * tk + j) * d + off + dh];
                        let s = qrow.iter().zip(krow).map(|(x, y)| x * y).sum::<f64>() * scale;
                        scores[j] = s;
                        max = max.max(s);
                    }
                    let p = &mut probs[((b * heads + h) * tq + i) * tk..((b * heads + h) * tq + i + 1) * tk];
                    let mut z = 0.0;
                    for j in 0..tk {
                        if km[j] {
                            p[j] = (scores[j] - max).exp();
                            z += p[j];
                        }
                    }
                    let orow = &mut out[(b * tq + i) * d + off..(b * tq + i) * d + off + dh];
                    for j in 0..tk {
                        if !km[j] {
                            continue;
                        }
                        p[j] /= z;
                        let vrow = &vd[(b * tk + j) * d + off..(b * tk + j) * d + off + dh];
                        for (o, &vv) in orow.iter_mut().zip(vrow) {
                            *o += p[j] * vv;
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[q, k, v]);
        let cache = AttentionCache {
            q,
            k,
            v,
            heads,
            key_mask: key_mask.to_vec(),
            probs,
        };
        Ok(self.push(
            Tensor::new(vec![n, tq, d], out)?,
            Op::Attention(Box::new(cache)),
            rg,
        ))
    }

    /// Single-query, single-head masked attention: `q` is `[n, d]`, `keys`
    /// and `values` are `[n, l, d]`, `mask` is `n * l`.
    ///
    /// Every row must have at least one valid position.
    pub fn masked_attention(&mut self, q: Var, keys: Var, values: Var, mask: &[bool]) -> Result<Var> {
        let sq = self.shape(q).to_vec();
        let sk = self.shape(keys).to_vec();
        if sq.len() != 2 || sk.len() != 3 {
            return Err(Error::Dimension {
                op: "masked_attention",
                axis: "rank".into(),
                expected: 2,
                found: sq.len(),
            });
        }
        let (n, d) = (sq[0], sq[1]);
        let l = sk[1];
        if mask.len() != n * l {
            return Err(Error::Dimension {
                op: "masked_attention",
                axis: "mask length".into(),
                expected: n * l,
                found: mask.len(),
            });
        }
        if let Some(row) = (0..n).find(|&r| !mask[r * l..(r + 1) * l].iter().any(|&m| m)) {
            return Err(Error::EmptyEvidence { row });
        }
        let q3 = self.reshape(q, &[n, 1, d])?;
        let out = self.attention(q3, keys, values, mask, None, 1)?;
        self.reshape(out, &[n, d])
    }

    /// Mean over axis 1 of `[n, t, d]` restricted to `mask` (`n * t`);
    /// rows without valid positions give zeros.
    pub fn masked_mean(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || mask.len() != s[0] * s[1] {
            return Err(Error::Dimension {
                op: "masked_mean",
                axis: "mask length".into(),
                expected: s.first().copied().unwrap_or(0) * s.get(1).copied().unwrap_or(0),
                found: mask.len(),
            });
        }
        let (n, t, d) = (s[0], s[1], s[2]);
        let xd = self.data(x);
        let mut out = vec![0.0; n * d];
        for b in 0..n {
            let m = &mask[b * t..(b + 1) * t];
            let count = m.iter().filter(|&&v| v).count();
            if count == 0 {
                continue;
            }
            let orow = &mut out[b * d..(b + 1) * d];
            for (j, _) in m.iter().enumerate().filter(|(_, &v)| v) {
                for (o, &v) in orow.iter_mut().zip(&xd[(b * t + j) * d..(b * t + j + 1) * d]) {
                    *o += v;
                }
            }
            for o in orow.iter_mut() {
                *o /= count as f64;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            Op::MaskedMean {
                x,
                mask: mask.to_vec(),
                steps: t,
            },
            rg,
        ))
    }

    /// Keeps rows (last-axis vectors) where `keep` is set and writes exact
    /// zeros elsewhere, whatever the input holds there.
    pub fn mask_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        if keep.len() != xv.rows() {
            return Err(Error::Dimension {
                op: "mask_rows",
                axis: "rows".into(),
                expected: xv.rows(),
                found: keep.len(),
            });
        }
        let c = xv.cols();
        let mut data = vec![0.0; xv.len()];
        for (r, &k) in keep.iter().enumerate() {
            if k {
                data[r * c..(r + 1) * c].copy_from_slice(xv.row(r));
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            value,
            Op::MaskRows {
                x,
                keep: keep.to_vec(),
            },
            rg,
        ))
    }

    /// Row lookup: output is `[idx.len(), cols]`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, c) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= rows {
                return Err(Error::Dimension {
                    op: "gather",
                    axis: "row index".into(),
                    expected: rows,
                    found: i,
                });
            }
            data.extend_from_slice(tv.row(i));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new(vec![idx.len(), c], data)?,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Squared L2 norm of each last-axis vector.
    pub fn row_sq_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let data: Vec<f64> = xv.data().chunks(c).map(|r| r.iter().map(|v| v * v).sum()).collect();
        let shape = xv.shape()[..xv.shape().len().saturating_sub(1)].to_vec();
        let value = Tensor::new(shape, data).expect("row_sq_norm shape");
        let rg = self.rg(&[x]);
        self.push(value, Op::RowSqNorm(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar loss");
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }

        Gradients {
            grads,
            shapes: self.nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect(),
        }
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        if let Op::Attention(cache) = &node.op {
            return self.attention_backward(cache, &node.value, g, grads);
        }
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let len = nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, nn) = (av.rows(), av.cols(), bv.shape()[1]);
                let (ad, bd) = (av.data(), bv.data());
                if wants(*a) {
                    acc(*a, &mut |ga| {
                        for i in 0..m {
                            let grow = &g[i * nn..(i + 1) * nn];
                            for p in 0..k {
                                let brow = &bd[p * nn..(p + 1) * nn];
                                ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                }
                if wants(*b) {
                    acc(*b, &mut |gb| {
                        for i in 0..m {
                            let grow = &g[i * nn..(i + 1) * nn];
                            for p in 0..k {
                                let aip = ad[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for (o, &gv) in gb[p * nn..(p + 1) * nn].iter_mut().zip(grow) {
                                    *o += aip * gv;
                                }
                            }
                        }
                    });
                }
            }
            Op::AddBias { x, bias } => {
                acc(*x, &mut |gx| add_into(gx, g));
                let c = out.cols();
                acc(*bias, &mut |gb| {
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    for (o, &v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |ga| {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(bd) {
                        *o += gv * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(ad) {
                        *o += gv * x;
                    }
                });
            }
            Op::Scale { x, factor } => acc(*x, &mut |gx| {
                for (o, &gv) in gx.iter_mut().zip(g) {
                    *o += gv * factor;
                }
            }),
            Op::DivScalar { x, divisor } => acc(*x, &mut |gx| {
                for (o, &gv) in gx.iter_mut().zip(g) {
                    *o += gv / divisor;
                }
            }),
            Op::AddScalar(x) | Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Gelu(x) => {
                let xd = nodes[x.0].value.data();
                acc(*x, &mut |gx| {
                    for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        *o += gv * gelu_grad(xv);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yd = out.data();
                acc(*x, &mut |gx| {
                    for ((o, &gv), &y) in gx.iter_mut().zip(g).zip(yd) {
                        *o += gv * y * (1.0 - y);
                    }
                });
            }
            Op::Log(x) => {
                let xd = nodes[x.0].value.data();
                acc(*x, &mut |gx| {
                    for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        *o += gv / xv;
                    }
                });
            }
            Op::Cos(x) => {
                let xd = nodes[x.0].value.data();
                acc(*x, &mut |gx| {
                    for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        *o -= gv * xv.sin();
                    }
                });
            }
            Op::Relu(x) => {
                let xd = nodes[x.0].value.data();
                acc(*x, &mut |gx| {
                    for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        if xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xd = nodes[x.0].value.data();
                acc(*x, &mut |gx| {
                    for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        if xv >= *lo && xv <= *hi {
                            *o += gv;
                        }
                    }
                });
            }
            Op::OuterAffine { t, w, b } => {
                let (td, wd) = (nodes[t.0].value.data(), nodes[w.0].value.data());
                let dim = wd.len();
                acc(*t, &mut |gt| {
                    for (i, o) in gt.iter_mut().enumerate() {
                        *o += g[i * dim..(i + 1) * dim].iter().zip(wd).map(|(x, y)| x * y).sum::<f64>();
                    }
                });
                acc(*w, &mut |gw| {
                    for (i, &tv) in td.iter().enumerate() {
                        for (o, &gv) in gw.iter_mut().zip(&g[i * dim..(i + 1) * dim]) {
                            *o += gv * tv;
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for row in g.chunks(dim) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let shape = out.shape();
                let (outer, inner) = outer_inner(shape, *axis);
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let block = nodes[v.0].value.shape()[*axis] * inner;
                    acc(v, &mut |gv| {
                        for o in 0..outer {
                            add_into(
                                &mut gv[o * block..(o + 1) * block],
                                &g[o * total + offset..o * total + offset + block],
                            );
                        }
                    });
                    offset += block;
                }
            }
            Op::Slice { x, axis, start } => {
                let src_shape = nodes[x.0].value.shape();
                let (outer, inner) = outer_inner(src_shape, *axis);
                let len = out.shape()[*axis];
                let full = src_shape[*axis];
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let base = o * full * inner + start * inner;
                        add_into(&mut gx[base..base + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = out.cols();
                let gd = nodes[gain.0].value.data();
                acc(*x, &mut |gx| {
                    for (r, inv) in inv_std.iter().enumerate() {
                        let grow = &g[r * c..(r + 1) * c];
                        let hrow = &xhat[r * c..(r + 1) * c];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..c {
                            let dh = grow[j] * gd[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[j];
                        }
                        mean_dh /= c as f64;
                        mean_dh_h /= c as f64;
                        for j in 0..c {
                            let dh = grow[j] * gd[j];
                            gx[r * c + j] += inv * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ((o, &gv), &h) in gg.iter_mut().zip(grow).zip(hrow) {
                            *o += gv * h;
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Attention(_) => unreachable!(),
            Op::MaskedMean { x, mask, steps } => {
                let d = out.cols();
                let t = *steps;
                acc(*x, &mut |gx| {
                    for (b, m) in mask.chunks(t).enumerate() {
                        let count = m.iter().filter(|&&v| v).count();
                        if count == 0 {
                            continue;
                        }
                        let grow = &g[b * d..(b + 1) * d];
                        for (j, _) in m.iter().enumerate().filter(|(_, &v)| v) {
                            for (o, &gv) in gx[(b * t + j) * d..(b * t + j + 1) * d].iter_mut().zip(grow) {
                                *o += gv / count as f64;
                            }
                        }
                    }
                });
            }
            Op::MaskRows { x, keep } => {
                let c = out.cols();
                acc(*x, &mut |gx| {
                    for (r, &k) in keep.iter().enumerate() {
                        if k {
                            add_into(&mut gx[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                        }
                    }
                });
            }
            Op::Gather { table, idx } => {
                let c = out.cols();
                acc(*table, &mut |gt| {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut gt[i * c..(i + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::RowSqNorm(x) => {
                let xv = &nodes[x.0].value;
                let c = xv.cols();
                acc(*x, &mut |gx| {
                    for ((row, xr), &gv) in gx.chunks_mut(c).zip(xv.data().chunks(c)).zip(g) {
                        for (o, &x) in row.iter_mut().zip(xr) {
                            *o += 2.0 * gv * x;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Mean(x) => acc(*x, &mut |gx| {
                let n = gx.len() as f64;
                for o in gx.iter_mut() {
                    *o += g[0] / n;
                }
            }),
        }
    }

    fn attention_backward(&self, c: &AttentionCache, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (n, tq, d) = (out.shape()[0], out.shape()[1], out.shape()[2]);
        let tk = self.shape(c.k)[1];
        let heads = c.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(c.q), self.data(c.k), self.data(c.v));
        let mut gq = vec![0.0; qd.len()];
        let mut gk = vec![0.0; kd.len()];
        let mut gv = vec![0.0; vd.len()];
        let mut dp = vec![0.0; tk];
        for b in 0..n {
            let km = &c.key_mask[b * tk..(b + 1) * tk];
            for i in 0..tq {
                for h in 0..heads {
                    let off = h * dh;
                    let p = &c.probs[((b * heads + h) * tq + i) * tk..((b * heads + h) * tq + i + 1) * tk];
                    let qo = (b * tq + i) * d + off;
                    let grow = &g[qo..qo + dh];
                    let mut sum_pdp = 0.0;
                    for j in 0..tk {
                        if !km[j] || p[j] == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let vo = (b * tk + j) * d + off;
                        dp[j] = grow.iter().zip(&vd[vo..vo + dh]).map(|(x, y)| x * y).sum();
                        sum_pdp += p[j] * dp[j];
                        for (o, &gg) in gv[vo..vo + dh].iter_mut().zip(grow) {
                            *o += p[j] * gg;
                        }
                    }
                    for j in 0..tk {
                        if !km[j] || p[j] == 0.0 {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - sum_pdp) * scale;
                        let ko = (b * tk + j) * d + off;
                        for t in 0..dh {
                            gq[qo + t] += ds * kd[ko + t];
                            gk[ko + t] += ds * qd[qo + t];
                        }
                    }
                }
            }
        }
        for (v, buf) in [(c.q, gq), (c.k, gk), (c.v, gv)] {
            if !self.nodes[v.0].requires_grad {
                continue;
            }
            match &mut grads[v.0] {
                Some(existing) => add_into(existing, &buf),
                slot @ None => *slot = Some(buf),
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn linear_with_identity_weights_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(t(&[2], &[0.0, 0.0]));
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_with_zero_input_passes_bias() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[0.0, 0.0]));
        let w = tape.leaf(t(&[2, 2], &[0.3, -1.7, 2.2, 9.0]));
        let b = tape.leaf(t(&[2], &[3.0, -1.0]));
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -1.0]);
    }

    #[test]
    fn linear_shape_mismatch_names_axis() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 3]));
        let w = tape.leaf(Tensor::zeros(&[2, 2]));
        let err = tape.linear(x, w, None).unwrap_err();
        match err {
            Error::Dimension { op, axis, expected, found } => {
                assert_eq!(op, "matmul");
                assert!(axis.contains("inner"));
                assert_eq!((expected, found), (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        let b = tape.leaf(Tensor::zeros(&[3]));
        let w = tape.leaf(Tensor::zeros(&[3, 2]));
        assert!(matches!(tape.linear(x, w, Some(b)), Err(Error::Dimension { op: "add_bias", .. })));
    }

    #[test]
    fn single_valid_position_returns_its_value() {
        let mut tape = Tape::new();
        let q = tape.leaf(t(&[1, 2], &[5.0, -3.0]));
        let k = tape.leaf(t(&[1, 3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let v = tape.leaf(t(&[1, 3, 2], &[10.0, 20.0, 30.0, 40.0, 50.0, 60.0]));
        let out = tape.masked_attention(q, k, v, &[false, true, false]).unwrap();
        assert_eq!(tape.value(out).data(), &[30.0, 40.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut tape = Tape::new();
        let q = tape.leaf(t(&[1, 2], &[0.7, 0.2]));
        let k = tape.leaf(t(&[1, 2, 2], &[1.0, 1.0, 1.0, 1.0]));
        let v = tape.leaf(t(&[1, 2, 2], &[2.0, 4.0, 6.0, 8.0]));
        let out = tape.masked_attention(q, k, v, &[true, true]).unwrap();
        let o = tape.value(out).data();
        assert!((o[0] - 4.0).abs() < 1e-15 && (o[1] - 6.0).abs() < 1e-15);
    }

    #[test]
    fn masked_value_perturbation_is_invisible() {
        let run = |masked_val: f64| {
            let mut tape = Tape::new();
            let q = tape.leaf(t(&[1, 2], &[0.3, -0.8]));
            let k = tape.leaf(t(&[1, 3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
            let v = tape.leaf(t(&[1, 3, 2], &[1.0, 2.0, masked_val, masked_val, 5.0, 6.0]));
            let out = tape.masked_attention(q, k, v, &[true, false, true]).unwrap();
            tape.value(out).clone()
        };
        assert!(run(0.0).bit_eq(&run(1e9)));
    }

    #[test]
    fn all_masked_row_is_empty_evidence() {
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::zeros(&[2, 2]));
        let k = tape.leaf(Tensor::zeros(&[2, 2, 2]));
        let err = tape.masked_attention(q, k, k, &[true, false, false, false]).unwrap_err();
        assert!(matches!(err, Error::EmptyEvidence { row: 1 }));
    }

    #[test]
    fn stop_gradient_passes_values_and_blocks_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]));
        let s = tape.stop_gradient(x);
        assert_eq!(tape.value(s), tape.value(x));
        let m = tape.mean(s);
        let grads = tape.backward(m);
        assert!(grads.get(x).is_none());
        assert_eq!(grads.wrt(x).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn stop_gradient_blocks_only_its_branch() {
        // d/dx mean(x * sg(x)) = sg(x) / n
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]));
        let s = tape.stop_gradient(x);
        let p = tape.mul(x, s).unwrap();
        let m = tape.mean(p);
        let g = tape.backward(m).wrt(x);
        for (gv, xv) in g.data().iter().zip([1.0, -2.0, 0.5]) {
            assert!((gv - xv / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn concat_then_slice_roundtrips() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t(&[2, 2, 2], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[2, 3, 2]);
        assert_eq!(
            tape.value(c).data(),
            &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]
        );
        let back = tape.slice(c, 1, 1, 2).unwrap();
        assert_eq!(tape.value(back), tape.value(b));
    }

    #[test]
    fn masked_mean_of_empty_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2, 1], &[1.0, 3.0, 7.0, 9.0]));
        let m = tape.masked_mean(x, &[true, true, false, false]).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 0.0]);
    }
}
