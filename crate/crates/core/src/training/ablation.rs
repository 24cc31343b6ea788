use super::config::{Ablation, TrainConfig};
use super::trainer::{train, TrainData};
use crate::data::{Setting, Split};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_link_prediction, evaluate_retrieval, EvalContext, ModelScorer};
use crate::model::PrismConfig;
use crate::objectives::ObjectiveWeights;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// A metric reported by the suite: test-split `ap_transductive`,
/// `hits@10_inductive` and so on, or `val_ap`, the best validation AP seen
/// during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SuiteMetric {
    ValAp,
    Ap(Setting),
    Auc(Setting),
    Hits(usize, Setting),
}

impl fmt::Display for SuiteMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SuiteMetric::ValAp => f.write_str("val_ap"),
            SuiteMetric::Ap(s) => write!(f, "ap_{s}"),
            SuiteMetric::Auc(s) => write!(f, "auc_{s}"),
            SuiteMetric::Hits(k, s) => write!(f, "hits@{k}_{s}"),
        }
    }
}

impl FromStr for SuiteMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown metric {s:?} (val_ap, ap_<setting>, auc_<setting>, hits@K_<setting>)"));
        if s == "val_ap" {
            return Ok(SuiteMetric::ValAp);
        }
        let (name, setting) = s.rsplit_once('_').ok_or_else(bad)?;
        let setting: Setting = setting.parse()?;
        match name {
            "ap" => Ok(SuiteMetric::Ap(setting)),
            "auc" => Ok(SuiteMetric::Auc(setting)),
            other => {
                let k = other.strip_prefix("hits@").and_then(|k| k.parse().ok()).filter(|&k| k >= 1);
                k.map(|k| SuiteMetric::Hits(k, setting)).ok_or_else(bad)
            }
        }
    }
}

impl TryFrom<String> for SuiteMetric {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SuiteMetric> for String {
    fn from(m: SuiteMetric) -> String {
        m.to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub model: PrismConfig,
    pub weights: ObjectiveWeights,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub metrics: Vec<SuiteMetric>,
    pub pool_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub metric: String,
    /// Mean over seeds with a defined value.
    pub value: Option<f64>,
    pub per_seed: Vec<Option<f64>>,
    pub delta_vs_full: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// `↓0.0123` for a drop, `↑0.0123` for a gain, `0` for no change.
pub fn arrow_delta(delta: f64) -> String {
    if delta < 0.0 {
        format!("↓{:.4}", -delta)
    } else if delta > 0.0 {
        format!("↑{delta:.4}")
    } else {
        "0".into()
    }
}

impl AblationTable {
    pub fn row(&self, variant: &str, metric: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,metric,value,delta_vs_full\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.variant,
                r.metric,
                fmt_opt(r.value),
                fmt_opt(r.delta_vs_full)
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| variant | metric | value | vs full |\n|---|---|---|---|\n");
        for r in &self.rows {
            let value = r.value.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"));
            let delta = r.delta_vs_full.map_or_else(|| "n/a".into(), arrow_delta);
            out.push_str(&format!("| {} | {} | {value} | {delta} |\n", r.variant, r.metric));
        }
        out
    }
}

fn mean(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Trains each variant once per seed and reports test metrics with deltas
/// against the `full` variant (when it is part of the list).
pub fn run_ablation_suite(data: TrainData<'_>, suite: &SuiteConfig, variants: &[Ablation]) -> Result<AblationTable> {
    if variants.is_empty() || suite.seeds.is_empty() || suite.metrics.is_empty() {
        return Err(Error::Config("ablation suite needs variants, seeds and metrics".into()));
    }
    let ctx = EvalContext::new(data.dataset, data.splits);
    // values[variant][metric][seed]
    let mut values = vec![vec![Vec::with_capacity(suite.seeds.len()); suite.metrics.len()]; variants.len()];
    for (vi, variant) in variants.iter().enumerate() {
        for &seed in &suite.seeds {
            let cfg = TrainConfig {
                seed,
                ablation: *variant,
                ..suite.train.clone()
            };
            let outcome = train(data, &suite.model, &suite.weights, &cfg)?;
            let scorer = ModelScorer {
                model: &outcome.best,
                features: data.features,
            };
            for (mi, metric) in suite.metrics.iter().enumerate() {
                let v = match *metric {
                    SuiteMetric::ValAp => outcome.report.best_val_ap,
                    SuiteMetric::Ap(s) => evaluate_link_prediction(&scorer, &ctx, Split::Test, s, seed)?.ap,
                    SuiteMetric::Auc(s) => evaluate_link_prediction(&scorer, &ctx, Split::Test, s, seed)?.auc,
                    SuiteMetric::Hits(k, s) => {
                        evaluate_retrieval(&scorer, &ctx, Split::Test, s, suite.pool_size, &[k], seed)?.hit(k)
                    }
                };
                log::info!("{variant} seed {seed}: {metric} = {v:?}");
                values[vi][mi].push(v);
            }
        }
    }
    let full = variants.iter().position(|v| *v == Ablation::Full);
    let mut rows = Vec::new();
    for (vi, variant) in variants.iter().enumerate() {
        for (mi, metric) in suite.metrics.iter().enumerate() {
            let value = mean(&values[vi][mi]);
            let base = full.and_then(|f| mean(&values[f][mi]));
            rows.push(AblationRow {
                variant: variant.to_string(),
                metric: metric.to_string(),
                value,
                per_seed: values[vi][mi].clone(),
                delta_vs_full: value.zip(base).map(|(v, b)| v - b),
            });
        }
    }
    Ok(AblationTable {
        seeds: suite.seeds.clone(),
        rows,
    })
}
