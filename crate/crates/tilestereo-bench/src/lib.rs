//! Shared fixtures for the criterion benchmarks: deterministic random
//! tensors and a small prebuilt model so individual benches measure kernels,
//! not setup.

use rand::Rng;
use tilestereo::model::{self, ModelConfig};
use tilestereo::tensor::store::seeded_rng;
use tilestereo::tensor::{ParameterStore, Tensor};

/// Uniform random tensor in `[0, 1)`, reproducible in the seed and name.
pub fn random_tensor(shape: [usize; 4], seed: u64, name: &str) -> Tensor<f32> {
    let mut rng = seeded_rng(seed, name);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(0.0..1.0f32))
}

/// A freshly initialized small model plus its configuration.
pub fn small_model() -> (ParameterStore<f32>, ModelConfig) {
    let cfg = ModelConfig::gradcheck_small();
    let mut store = ParameterStore::new();
    model::build_params(&mut store, &cfg, 0);
    (store, cfg)
}
