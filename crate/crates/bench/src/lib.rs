//! Shared fixtures for the criterion benchmarks.

use neonext_core::rng::gaussian_fill;
use neonext_core::{Matrix, NeoCellParams, NeoCellSpec, Rng, Tensor4};

pub fn random_input(dims: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = Rng::new(seed);
    Tensor4::from_fn(dims, |_, _, _, _| rng.normal())
}

/// Single-group `k x k` NeoCell over `c` channels with NeoInit weights.
pub fn neocell_fixture(c: usize, k: usize, seed: u64) -> (NeoCellSpec, NeoCellParams) {
    let spec = NeoCellSpec::uniform(c, (k, k), (k, k), false).expect("valid patch size");
    let params = NeoCellParams::neoinit(&spec, &mut Rng::new(seed)).expect("params match spec");
    (spec, params)
}

/// `c` random `k x k` depthwise kernels.
pub fn dwconv_fixture(c: usize, k: usize, seed: u64) -> Vec<Matrix> {
    let mut rng = Rng::new(seed);
    (0..c)
        .map(|_| gaussian_fill(&mut rng, k, k, 1.0 / k as f64).expect("non-negative sigma"))
        .collect()
}
