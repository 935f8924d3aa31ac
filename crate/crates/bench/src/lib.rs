//! Fixtures shared by the criterion benchmarks.

use histn::model::build_model;
use histn::{HistnModel, ModelConfig, Tensor, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default-sized model of the given variant with seeded weights.
pub fn model(variant: Variant) -> HistnModel {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    build_model(&ModelConfig::default().with_variant(variant), &mut rng).expect("default config is valid")
}

/// Uniform noise shaped like a batch of one-second windows.
pub fn batch(model: &HistnModel, size: usize) -> (Tensor, Vec<usize>) {
    let cfg = model.config();
    let (t, c) = (cfg.input_len, cfg.hierarchy.num_channels());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = (0..size * t * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..size).map(|i| i % cfg.num_classes + 1).collect();
    (Tensor::new(&[size, t, c], x).expect("shape matches"), labels)
}
