//! Shared fixtures for the benchmark targets.

use laft_core::rng;
use laft_core::Tensor;

/// Deterministic random tensor for benchmarks.
pub fn bench_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "bench", 0);
    Tensor::standard_normal(shape, &mut r)
}
