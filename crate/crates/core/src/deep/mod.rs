//! Models built from RBM layers: greedily pretrained DBNs, DBMs, replicated
//! softmax and Gaussian RBMs, and the supervised networks trained on top.

mod dbm;
mod ffnn;
mod stack;
mod variants;

pub use dbm::{
    dbm_features, dbm_gradient, dbm_pretrain, dbm_pretrain_and_train, dbm_train, mean_field, mean_field_trace,
    variational_free_energy, DbmConfig, DbmEvent, DbmObserver,
};
pub use ffnn::{
    argmax, error_rate, ffnn_finetune, logistic_head, Classifier, DenseLayer, EpochErrors, Ffnn, FinetuneConfig,
    FinetuneReport, Labeled,
};
pub use stack::{
    add_symmetric_layer, dbn_layer_init, dbn_pretrain, grow_top_layer, train_top_layer, DbnLayerConfig, LayerObserver, LayerStack,
    Propagation, StackLayer,
};
pub use variants::{
    check_counts, grbm_exact_gradient, grbm_log_likelihood, grbm_log_partition, grbm_train, rsm_train,
    unstandardized_features, STANDARDIZED_VARIANCE,
};
