//! Restricted Boltzmann machines: parameters, energies, conditionals, Gibbs
//! transitions, contrastive-divergence gradients, SGD training and exact
//! enumeration for tiny models.
//!
//! Three visible-unit families share one code path, selected by
//! [`LayerKind`]: binary units, unit-variance Gaussian units and replicated
//! softmax units over word counts. Hidden units are always binary.

mod cd;
mod exact;
mod gibbs;
mod params;
mod train;
mod units;

pub use cd::{cd_gradient, cd_gradient_for, BatchMasks};
pub use exact::{
    enumerate_states, exact_gradient, exact_gradient_weighted, exact_log_likelihood, exact_log_partition,
    exact_log_partition_masked, state_index, visible_distribution, ENUMERATION_LIMIT,
};
pub use gibbs::{gibbs_step, GibbsChain};
pub use params::{LayerKind, Mask, RbmParams};
pub use train::{sgd_epoch, sgd_epoch_for, EpochOutcome, TrainConfig, DIVERGENCE_LIMIT};
pub use units::{
    cond_h_given_v, cond_v_given_h, energy, free_energy, free_energy_gradient, free_energy_masked,
    hidden_probabilities, visible_mean, UnitModel,
};
