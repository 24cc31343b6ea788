#![allow(dead_code)]

use prism_core::data::{generate_synthetic, DyTagDataset, SyntheticConfig};
use prism_core::embedding::{embed_all, EmbeddingSource, HashingEmbedderConfig, TextFeatures};
use prism_core::model::{PrismConfig, PrismModel};
use prism_core::rng::Rng;

pub fn small_config(steps: usize) -> PrismConfig {
    PrismConfig {
        d: 8,
        d_time: 4,
        history_len: 4,
        steps,
        heads: 2,
        enc_layers: 1,
        ..PrismConfig::default()
    }
}

pub fn dataset(seed: u64) -> DyTagDataset {
    generate_synthetic(&SyntheticConfig::new(20, 120, 2, 0.7, seed)).unwrap()
}

pub fn features(ds: &DyTagDataset) -> TextFeatures {
    embed_all(ds, &EmbeddingSource::Hash(HashingEmbedderConfig { dim: 16, salt: 0 })).unwrap()
}

/// A model whose every parameter, including the zero-initialized output
/// layers, has been moved off its initial value.
pub fn perturbed_model(cfg: PrismConfig, text_dim: usize, seed: u64) -> PrismModel {
    let rng = Rng::new(seed);
    let mut model = PrismModel::new(cfg, text_dim, &rng).unwrap();
    model.perturb(&mut rng.split("perturb"), 0.3);
    model
}
