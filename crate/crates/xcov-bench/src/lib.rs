//! Shared fixtures for the criterion benches.

use xcov_core::synthgen::{sample_observations, BenchmarkSpec, RngStream};
use xcov_core::DenseMatrix;

/// One seeded synthetic draw at the requested size.
pub fn benchmark_window(
    n_x: usize,
    n_y: usize,
    dt: usize,
    seed: u64,
) -> (DenseMatrix, DenseMatrix) {
    let mut rng = RngStream::new(seed, 0).rng();
    let spec = BenchmarkSpec::FiniteRank { xi: 0.2, sigma2: 0.5 };
    let model = spec.build(n_x, n_y, &mut rng).expect("valid spec");
    sample_observations(&model, dt, &mut rng).expect("sampling succeeds")
}
