//! Optimizer layer: Kronecker-factored natural-gradient updates with the
//! adaptive trust-region learning-rate schedule, and a first-order baseline
//! (momentum SGD and an adaptive-moment variant).

mod factors;
mod first_order;
mod kfac;
mod lr_control;

pub use factors::{
    estimate_critic_factors, estimate_policy_factors, KroneckerFactors, LayerFactors,
};
pub use first_order::{FirstOrderKind, FirstOrderOptimizer};
pub use kfac::{gauss_newton_critic_step, kfac_step, log_std_natural_step};
pub use lr_control::{adapt_learning_rate, KlAdaptEvent, LrState};
