//! Fixtures shared by the benchmarks.

use boltzreg::numerics::{Matrix, RandomSource};
use boltzreg::rbm::RbmParams;

/// Binary data with every unit on with probability one half.
pub fn binary_data(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = RandomSource::new(seed, 0);
    Matrix::from_fn(rows, cols, |_, _| if rng.uniform() < 0.5 { 1.0 } else { 0.0 })
}

/// An RBM with small random weights and zero biases.
pub fn rbm(n_visible: usize, n_hidden: usize, seed: u64) -> RbmParams {
    RbmParams::random_init(n_visible, n_hidden, &mut RandomSource::new(seed, 1))
}
