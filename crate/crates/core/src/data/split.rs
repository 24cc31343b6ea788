use super::dataset::{DyTagDataset, InteractionEvent};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.15, 0.15];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Transductive,
    Inductive,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (train|val|test)"))),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Transductive => "transductive",
            Setting::Inductive => "inductive",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transductive" => Ok(Setting::Transductive),
            "inductive" => Ok(Setting::Inductive),
            other => Err(Error::Config(format!(
                "unknown setting {other:?} (transductive|inductive)"
            ))),
        }
    }
}

/// Contiguous chronological train/val/test ranges over the event list.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    /// Nodes appearing as an endpoint of some training event.
    pub train_nodes: BTreeSet<usize>,
    /// Nodes absent from all training interactions.
    pub inductive_nodes: BTreeSet<usize>,
}

impl DatasetSplits {
    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }

    /// Transductive iff both endpoints were seen in training.
    pub fn setting_of(&self, e: &InteractionEvent) -> Setting {
        if self.train_nodes.contains(&e.src) && self.train_nodes.contains(&e.dst) {
            Setting::Transductive
        } else {
            Setting::Inductive
        }
    }

    /// Indices of events in `split` that belong to `setting`.
    pub fn filtered(&self, ds: &DyTagDataset, split: Split, setting: Setting) -> Vec<usize> {
        self.range(split)
            .filter(|&i| self.setting_of(&ds.events()[i]) == setting)
            .collect()
    }
}

/// Train = first ⌊r0·N⌋ events, val = next ⌊r1·N⌋, test = the rest.
pub fn chronological_split(ds: &DyTagDataset, ratios: [f64; 3]) -> Result<DatasetSplits> {
    let n = ds.num_events();
    if n < 10 {
        return Err(Error::Config(format!("{n} events is too few to split (need at least 10)")));
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    // Tiny slack so products like 0.7 * 10 do not floor to 6.
    let n_train = (ratios[0] * n as f64 + 1e-9).floor() as usize;
    let n_val = (ratios[1] * n as f64 + 1e-9).floor() as usize;
    let train = 0..n_train;
    let val = n_train..n_train + n_val;
    let test = n_train + n_val..n;

    let train_nodes: BTreeSet<usize> = ds.events()[train.clone()]
        .iter()
        .flat_map(|e| [e.src, e.dst])
        .collect();
    let inductive_nodes = (0..ds.num_nodes()).filter(|v| !train_nodes.contains(v)).collect();
    Ok(DatasetSplits {
        train,
        val,
        test,
        train_nodes,
        inductive_nodes,
    })
}
