//! Model-fit and theory-check metrics: pseudo-likelihood, AIS estimates of
//! the partition function, the exact masked DBN variational bound,
//! classification error and parameter-recovery studies.

mod ais;
mod bound;
mod classify;
mod convergence;
mod pseudo;

pub use ais::{
    ais_log_likelihood, ais_log_partition, base_params, base_rate_bias, log_likelihood_given, AisConfig, AisEstimate,
    AisLikelihood,
};
pub use bound::{aggregated_posterior, dbn_bound, fit_top_layer_exact, dbn_log_likelihood, BoundReport, MASK_ENUMERATION_BITS, MASK_SAMPLES};
pub use classify::{classification_error, confusion_matrix};
pub use convergence::{
    align_hidden_units, convergence_suite, sample_exact, support_recovery, tv_distance, ConvergencePoint, GridPoint,
    SupportRecovery,
};
pub use pseudo::{pseudo_likelihood, stochastic_pseudo_likelihood};
