//! Gaussian-head comparators: variational BNN, MC Dropout and Deep Ensembles.

pub mod bnn;
pub mod gaussian;

pub use bnn::{bnn_predict, bnn_train, elbo, kl_diag, ElboEval, Posterior};
pub use gaussian::{
    aggregate, ensemble_predict, ensemble_train, gaussian_pi, mcdropout_predict, mcdropout_train, member_seed, train_gaussian,
    z_score, Predictive,
};
