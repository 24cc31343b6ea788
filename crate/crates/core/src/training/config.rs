use crate::error::{Error, Result};
use crate::model::PrismConfig;
use crate::objectives::ObjectiveWeights;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Model or objective variant trained against the full model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Ablation {
    #[default]
    Full,
    WoSemantic,
    WoBehavior,
    WoRecon,
    WoMargin,
    WoStep,
    /// Full model with `K` refinement steps.
    Steps(usize),
}

impl Ablation {
    /// Resolves the variant into concrete model and objective settings.
    pub fn apply(&self, model: &PrismConfig, weights: &ObjectiveWeights) -> (PrismConfig, ObjectiveWeights) {
        let (mut m, mut w) = (model.clone(), *weights);
        match *self {
            Ablation::Full => {}
            Ablation::WoSemantic => m.use_semantic = false,
            Ablation::WoBehavior => m.use_behavior = false,
            Ablation::WoRecon => w.lambda_recon = 0.0,
            Ablation::WoMargin => w.lambda_margin = 0.0,
            Ablation::WoStep => w.lambda_step = 0.0,
            Ablation::Steps(k) => m.steps = k,
        }
        (m, w)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ablation::Full => f.write_str("full"),
            Ablation::WoSemantic => f.write_str("wo_semantic"),
            Ablation::WoBehavior => f.write_str("wo_behavior"),
            Ablation::WoRecon => f.write_str("wo_recon"),
            Ablation::WoMargin => f.write_str("wo_margin"),
            Ablation::WoStep => f.write_str("wo_step"),
            Ablation::Steps(k) => write!(f, "steps={k}"),
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "full" => Ablation::Full,
            "wo_semantic" => Ablation::WoSemantic,
            "wo_behavior" => Ablation::WoBehavior,
            "wo_recon" => Ablation::WoRecon,
            "wo_margin" => Ablation::WoMargin,
            "wo_step" => Ablation::WoStep,
            other => match other.strip_prefix("steps=").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Ablation::Steps(k),
                _ => {
                    return Err(Error::Config(format!(
                        "unknown ablation {other:?} (full, wo_semantic, wo_behavior, wo_recon, wo_margin, wo_step, steps=K)"
                    )))
                }
            },
        })
    }
}

impl TryFrom<String> for Ablation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Ablation> for String {
    fn from(a: Ablation) -> String {
        a.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub eval_every: usize,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            early_stop_patience: 5,
            eval_every: 1,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::Config("train.early_stop_patience must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("train.eval_every must be at least 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("train.lr = {} must be finite and non-negative", self.lr)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for a in [
            Ablation::Full,
            Ablation::WoSemantic,
            Ablation::WoBehavior,
            Ablation::WoRecon,
            Ablation::WoMargin,
            Ablation::WoStep,
            Ablation::Steps(3),
        ] {
            assert_eq!(a.to_string().parse::<Ablation>().unwrap(), a);
        }
        assert!("steps=0".parse::<Ablation>().is_err());
        assert!("nope".parse::<Ablation>().is_err());
    }

    #[test]
    fn loss_removals_zero_one_weight() {
        let (m, w) = (PrismConfig::default(), ObjectiveWeights::default());
        assert_eq!(Ablation::WoRecon.apply(&m, &w).1.lambda_recon, 0.0);
        assert_eq!(Ablation::WoMargin.apply(&m, &w).1.lambda_margin, 0.0);
        assert_eq!(Ablation::WoStep.apply(&m, &w).1.lambda_step, 0.0);
        assert_eq!(Ablation::WoRecon.apply(&m, &w).0, m);
        assert_eq!(Ablation::Steps(4).apply(&m, &w).0.steps, 4);
    }
}
