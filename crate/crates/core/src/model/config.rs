use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    MaskedMean,
}

/// Architecture hyperparameters. The text embedding width is not part of
/// the config; it comes from the embedding source at construction time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrismConfig {
    pub d: usize,
    pub d_time: usize,
    /// History length.
    #[serde(rename = "L")]
    pub history_len: usize,
    /// Refinement steps.
    #[serde(rename = "K")]
    pub steps: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub use_semantic: bool,
    pub use_behavior: bool,
    pub pooling: Pooling,
}

impl Default for PrismConfig {
    fn default() -> Self {
        Self {
            d: 64,
            d_time: 16,
            history_len: 20,
            steps: 2,
            heads: 4,
            enc_layers: 2,
            use_semantic: true,
            use_behavior: true,
            pooling: Pooling::MaskedMean,
        }
    }
}

impl PrismConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_time == 0 {
            return Err(Error::Config("d and d_time must be positive".into()));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d = {} is not divisible by heads = {}",
                self.d, self.heads
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.history_len == 0 {
            return Err(Error::Config("L must be at least 1".into()));
        }
        Ok(())
    }
}
