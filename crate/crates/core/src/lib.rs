//! Regularized training and evaluation of restricted Boltzmann machines and
//! the deep models built from them.

pub mod deep;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod numerics;
pub mod rbm;
pub mod regularizers;

pub use error::{Error, Result};
