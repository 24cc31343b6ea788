//! Training losses: binary task loss, behavior reconstruction, the
//! trust-region margin, the step regularizer, and their weighted sum.
//!
//! Every term is written as a sum over the rows of one forward pass divided
//! by an externally supplied normalizer, so a batch split into chunks yields
//! losses (and gradients) that add up to the whole-batch values.

use crate::autodiff::{FfnVars, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{BehavioralBatch, ForwardPass};
use serde::{Deserialize, Serialize};

pub const SCORE_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub lambda_recon: f64,
    pub lambda_margin: f64,
    pub lambda_step: f64,
    pub margin: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            lambda_recon: 0.1,
            lambda_margin: 0.1,
            lambda_step: 0.1,
            margin: 1.0,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_recon", self.lambda_recon),
            ("lambda_margin", self.lambda_margin),
            ("lambda_step", self.lambda_step),
            ("margin", self.margin),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("objectives.{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Batch-level normalizers: the number of positive pairs and `|V_h|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossNorm {
    pub pairs: usize,
    pub instances: usize,
}

impl LossNorm {
    /// Normalizers for a whole batch laid out as `[positives ‖ negatives]`.
    pub fn for_batch(batch: &BehavioralBatch) -> Self {
        let m = batch.len() / 2;
        let l = batch.history_len;
        let instances = (0..m)
            .map(|i| usize::from(batch.src_side.non_empty(i, l)) + usize::from(batch.dst_side.non_empty(i, l)))
            .sum();
        Self { pairs: m, instances }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize)]
pub struct BatchLossReport {
    pub task: f64,
    pub recon: f64,
    pub margin: f64,
    pub step: f64,
    pub total: f64,
    pub instances: usize,
}

impl BatchLossReport {
    /// Builds a report whose total is the weighted sum of the components.
    pub fn from_components(task: f64, recon: f64, margin: f64, step: f64, instances: usize, w: &ObjectiveWeights) -> Result<Self> {
        for (name, v) in [("task", task), ("recon", recon), ("margin", margin), ("step", step)] {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("{name} loss"),
                });
            }
        }
        Ok(Self {
            task,
            recon,
            margin,
            step,
            total: task + w.lambda_recon * recon + w.lambda_margin * margin + w.lambda_step * step,
            instances,
        })
    }
}

/// Loss handles on one tape.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub task: Var,
    pub recon: Var,
    pub margin: Var,
    pub step: Var,
    pub total: Var,
}

fn check_scores(tape: &Tape, y: Var) -> Result<()> {
    if let Some(v) = tape.value(y).data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::NumericDomain(format!("score {v} outside (0, 1)")));
    }
    Ok(())
}

/// `-(1/pairs) Σ [log ŷ_pos + log(1 - ŷ_neg)]` with scores clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn task_loss(tape: &mut Tape, y_pos: Var, y_neg: Var, pairs: usize) -> Result<Var> {
    check_scores(tape, y_pos)?;
    check_scores(tape, y_neg)?;
    let p = tape.clamp(y_pos, SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    let lp = tape.log(p);
    let q = tape.scale(y_neg, -1.0);
    let q = tape.add_scalar(q, 1.0);
    let q = tape.clamp(q, SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    let lq = tape.log(q);
    let sp = tape.sum(lp);
    let sq = tape.sum(lq);
    let s = tape.add(sp, sq)?;
    Ok(tape.scale(s, -1.0 / pairs as f64))
}

fn zero(tape: &mut Tape) -> Var {
    tape.constant(Tensor::scalar(0.0))
}

/// `(1/instances) Σ ‖MLP(z) - sg(b)‖²` over the given rows.
pub fn recon_loss(tape: &mut Tape, recon: &FfnVars, z: Var, b: Var, instances: usize) -> Result<Var> {
    if instances == 0 || tape.value(z).rows() == 0 {
        return Ok(zero(tape));
    }
    let target = tape.stop_gradient(b);
    let pred = recon.apply(tape, z)?;
    let diff = tape.sub(pred, target)?;
    let sq = tape.row_sq_norm(diff);
    let s = tape.sum(sq);
    Ok(tape.div_scalar(s, instances as f64))
}

/// `(1/instances) Σ max(0, ‖z - s‖² - m)` over the given rows.
pub fn margin_loss(tape: &mut Tape, z: Var, s: Var, margin: f64, instances: usize) -> Result<Var> {
    if instances == 0 || tape.value(z).rows() == 0 {
        return Ok(zero(tape));
    }
    let diff = tape.sub(z, s)?;
    let sq = tape.row_sq_norm(diff);
    let shifted = tape.add_scalar(sq, -margin);
    let hinge = tape.relu(shifted);
    let sum = tape.sum(hinge);
    Ok(tape.div_scalar(sum, instances as f64))
}

/// `(1/(K·instances)) Σ_i Σ_k ‖z^(k+1) - z^(k)‖²` given the `K + 1` states
/// restricted to the chosen rows.
pub fn step_loss(tape: &mut Tape, states: &[Var], instances: usize) -> Result<Var> {
    let k = states.len().saturating_sub(1);
    if instances == 0 || k == 0 || tape.value(states[0]).rows() == 0 {
        return Ok(zero(tape));
    }
    let mut acc: Option<Var> = None;
    for w in states.windows(2) {
        let diff = tape.sub(w[1], w[0])?;
        let sq = tape.row_sq_norm(diff);
        let s = tape.sum(sq);
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    let total = acc.expect("k >= 1");
    Ok(tape.div_scalar(total, (k * instances) as f64))
}

/// Rows of a forward pass over `[positives ‖ negatives]` (equal halves) that
/// belong to `V_h`: both endpoints of each positive pair, when their history
/// is non-empty. Negative pairs never contribute.
pub fn history_rows(pass: &ForwardPass) -> Vec<usize> {
    let n = pass.n;
    let m = n / 2;
    (0..m)
        .filter(|&i| pass.non_empty[i])
        .chain((0..m).map(|i| n + i).filter(|&r| pass.non_empty[r]))
        .collect()
}

/// All four terms and the weighted total for a forward pass whose first
/// half of pairs are positives and second half their negatives.
pub fn batch_objective(
    tape: &mut Tape,
    pass: &ForwardPass,
    recon: &FfnVars,
    weights: &ObjectiveWeights,
    norm: LossNorm,
) -> Result<LossTerms> {
    if !pass.n.is_multiple_of(2) {
        return Err(Error::Config("objective needs equal numbers of positives and negatives".into()));
    }
    let m = pass.n / 2;
    let y_pos = tape.slice(pass.scores, 0, 0, m)?;
    let y_neg = tape.slice(pass.scores, 0, m, m)?;
    let task = task_loss(tape, y_pos, y_neg, norm.pairs)?;

    let rows = history_rows(pass);
    let (recon_v, margin_v, step_v) = if rows.is_empty() {
        (zero(tape), zero(tape), zero(tape))
    } else {
        let z = tape.gather(pass.final_state(), &rows)?;
        let b = tape.gather(pass.pooled, &rows)?;
        let s = tape.gather(pass.prior, &rows)?;
        let r = recon_loss(tape, recon, z, b, norm.instances)?;
        let mg = margin_loss(tape, z, s, weights.margin, norm.instances)?;
        let states = pass
            .states
            .iter()
            .map(|&st| tape.gather(st, &rows))
            .collect::<Result<Vec<_>>>()?;
        let st = step_loss(tape, &states, norm.instances)?;
        (r, mg, st)
    };

    let wr = tape.scale(recon_v, weights.lambda_recon);
    let wm = tape.scale(margin_v, weights.lambda_margin);
    let ws = tape.scale(step_v, weights.lambda_step);
    let t1 = tape.add(task, wr)?;
    let t2 = tape.add(t1, wm)?;
    let total = tape.add(t2, ws)?;
    Ok(LossTerms {
        task,
        recon: recon_v,
        margin: margin_v,
        step: step_v,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(tape: &mut Tape, v: &[f64]) -> Var {
        tape.constant(Tensor::matrix(v.len(), 1, v.to_vec()).unwrap())
    }

    #[test]
    fn task_loss_at_half() {
        let mut tape = Tape::new();
        let (p, n) = (col(&mut tape, &[0.5]), col(&mut tape, &[0.5]));
        let l = task_loss(&mut tape, p, n, 1).unwrap();
        assert!((tape.value(l).item() - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn task_loss_perfect_is_tiny() {
        let mut tape = Tape::new();
        let (p, n) = (col(&mut tape, &[1.0, 1.0]), col(&mut tape, &[0.0, 0.0]));
        let l = task_loss(&mut tape, p, n, 2).unwrap();
        assert!(tape.value(l).item() < 1e-11);
    }

    #[test]
    fn task_loss_rejects_out_of_range() {
        let mut tape = Tape::new();
        let (p, n) = (col(&mut tape, &[1.5]), col(&mut tape, &[0.5]));
        assert!(matches!(task_loss(&mut tape, p, n, 1), Err(Error::NumericDomain(_))));
    }

    #[test]
    fn margin_example() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let s = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let l = margin_loss(&mut tape, z, s, 3.0, 1).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
        let l0 = margin_loss(&mut tape, s, s, 0.0, 1).unwrap();
        assert_eq!(tape.value(l0).item(), 0.0);
    }

    #[test]
    fn step_example() {
        let mut tape = Tape::new();
        let states: Vec<Var> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&v| tape.constant(Tensor::matrix(1, 1, vec![v]).unwrap()))
            .collect();
        let l = step_loss(&mut tape, &states, 1).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);
    }

    #[test]
    fn report_total_is_weighted_sum() {
        let r = BatchLossReport::from_components(1.0, 2.0, 3.0, 4.0, 1, &ObjectiveWeights::default()).unwrap();
        assert!((r.total - 1.9).abs() < 1e-15);
        let zero = ObjectiveWeights {
            lambda_recon: 0.0,
            lambda_margin: 0.0,
            lambda_step: 0.0,
            margin: 1.0,
        };
        assert_eq!(BatchLossReport::from_components(1.25, 2.0, 3.0, 4.0, 1, &zero).unwrap().total, 1.25);
        assert!(matches!(
            BatchLossReport::from_components(1.0, f64::NAN, 0.0, 0.0, 1, &zero),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn negative_weight_rejected() {
        let w = ObjectiveWeights {
            lambda_step: -0.1,
            ..ObjectiveWeights::default()
        };
        assert!(w.validate().is_err());
    }
}
