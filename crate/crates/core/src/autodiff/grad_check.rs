//! Central finite-difference gradient checker.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::Rng;
use rand::seq::index::sample;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries probed per block; blocks larger than this are sampled.
    pub max_entries: Option<usize>,
    /// Floor on the relative-error denominator so near-zero gradients are
    /// judged in absolute terms.
    pub floor: f64,
    pub seed: u64,
    /// Fault injection: adds 1.0 to the analytic gradient of the named block.
    pub sabotage: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_entries: None,
            floor: 1e-6,
            seed: 0,
            sabotage: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&BlockReport> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |b| b.max_rel_error)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of `f` against central differences
/// (five-point stencil, truncation error O(h^4)).
///
/// `f` receives a fresh tape and one leaf per entry of `params`, and must
/// return a single-element output.
pub fn grad_check<F>(names: &[String], params: &[Tensor], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out);

    let mut rng = Rng::new(opts.seed).split("grad-check");
    let mut work: Vec<Tensor> = params.to_vec();
    let mut blocks = Vec::with_capacity(params.len());
    for (b, name) in names.iter().enumerate() {
        let mut analytic = grads.wrt(vars[b]);
        if opts.sabotage.as_deref() == Some(name.as_str()) {
            for g in analytic.data_mut() {
                *g += 1.0;
            }
        }
        let n = params[b].len();
        let entries: Vec<usize> = match opts.max_entries {
            Some(m) if m < n => {
                let mut e = sample(&mut rng, n, m).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..n).collect(),
        };
        let mut report = BlockReport {
            name: name.clone(),
            checked: entries.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &i in &entries {
            let orig = params[b].data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                work[b].data_mut()[i] = orig + offset;
                eval(&work)
            };
            let h = opts.step;
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            work[b].data_mut()[i] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = analytic.data()[i];
            let err = relative_error(a, numeric, opts.floor);
            if err > report.max_rel_error || (report.max_rel_error == 0.0 && i == entries[0]) {
                report.max_rel_error = err;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        blocks.push(report);
    }
    Ok(GradCheckReport { blocks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn sigmoid_at_zero_has_quarter_slope() {
        let x = vec![Tensor::vector(vec![0.0])];
        let report = grad_check(
            &names(1),
            &x,
            |t, v| {
                let s = t.sigmoid(v[0]);
                Ok(t.sum(s))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        let b = &report.blocks[0];
        assert!((b.analytic - 0.25).abs() < 1e-15);
        assert!((b.numeric - 0.25).abs() < 1e-8);
    }

    #[test]
    fn constant_function_reports_zero_gradient() {
        let x = vec![Tensor::vector(vec![0.3, -1.2])];
        let report = grad_check(
            &names(1),
            &x,
            |t, _| Ok(t.constant(Tensor::scalar(4.2))),
            &GradCheckOptions::default(),
        )
        .unwrap();
        let b = &report.blocks[0];
        assert!(b.analytic.abs() < 1e-8 && b.numeric.abs() < 1e-8);
        assert!(report.passes(1e-8));
    }

    #[test]
    fn sabotage_is_reported_against_the_block() {
        let x = vec![Tensor::vector(vec![0.5]), Tensor::vector(vec![0.1])];
        let opts = GradCheckOptions {
            sabotage: Some("p1".into()),
            ..Default::default()
        };
        let report = grad_check(
            &names(2),
            &x,
            |t, v| {
                let p = t.mul(v[0], v[1])?;
                Ok(t.sum(p))
            },
            &opts,
        )
        .unwrap();
        assert!(!report.passes(1e-4));
        assert_eq!(report.worst().unwrap().name, "p1");
    }
}
