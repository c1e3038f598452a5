//! Dense matrices, stable nonlinearities and the seedable random source
//! shared by every model in the crate.

mod activation;
mod matrix;
mod random;

pub use activation::{log1p_exp, log1p_exp_vec, log_sum_exp, sigmoid, sigmoid_vec};
pub use matrix::{dot, Matrix};
pub use random::{bernoulli_sample, RandomSource};
