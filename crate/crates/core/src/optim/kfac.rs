//! Kronecker-factored natural-gradient parameter updates.
//!
//! Per layer the update is eta * (G + l I)^{-1} [dW | db] (A + l I)^{-1},
//! where the total damping lambda is split symmetrically across the two
//! factors as l = sqrt(lambda); the factors themselves are the de-biased
//! EMA estimates. The state-independent log-std block of a Gaussian policy
//! has an exact diagonal Fisher of 2 I, so its natural step divides the
//! gradient by (2 + lambda) instead of going through factored curvature.

use ndarray::Array1;

use crate::error::OptimError;
use crate::linalg::{damped_inverse, kron_precondition};
use crate::nn::{LayerGrads, MlpParams};
use crate::optim::factors::KroneckerFactors;
use crate::optim::lr_control::LrState;

fn preconditioned_step(
    params: &mut MlpParams,
    grads: &[LayerGrads],
    factors: &KroneckerFactors,
    damping: f64,
    lr_state: &LrState,
) -> Result<(), OptimError> {
    if factors.update_count < 1 {
        return Err(OptimError::FactorsNotReady);
    }
    if grads.len() != params.num_layers() {
        return Err(OptimError::ShapeMismatch {
            context: "kfac grads depth",
            expected: params.num_layers(),
            got: grads.len(),
        });
    }
    let split = damping.sqrt();
    let eta = lr_state.eta;
    for (idx, layer) in params.layers_mut().iter_mut().enumerate() {
        let (a, g) = factors.debiased(idx);
        let a_inv = damped_inverse(&a, split)?;
        let g_inv = damped_inverse(&g, split)?;
        let combined = grads[idx].combined();
        let update = kron_precondition(&combined, &a_inv, &g_inv)?;
        let step = LayerGrads::from_combined(&update);
        layer
            .weight
            .zip_mut_with(&step.weight, |w, &d| *w -= eta * d);
        layer.bias.zip_mut_with(&step.bias, |b, &d| *b -= eta * d);
        if !(layer.weight.iter().all(|v| v.is_finite())
            && layer.bias.iter().all(|v| v.is_finite()))
        {
            return Err(OptimError::NonFiniteUpdate { layer: idx });
        }
    }
    Ok(())
}

/// Natural-gradient step on the policy network.
pub fn kfac_step(
    params: &mut MlpParams,
    grads: &[LayerGrads],
    factors: &KroneckerFactors,
    damping: f64,
    lr_state: &LrState,
) -> Result<(), OptimError> {
    preconditioned_step(params, grads, factors, damping, lr_state)
}

/// Natural-gradient step on the critic under the Gauss-Newton metric. The
/// metric enters through how the critic factors were estimated; the update
/// arithmetic is the same Kronecker-preconditioned step.
pub fn gauss_newton_critic_step(
    params: &mut MlpParams,
    grads: &[LayerGrads],
    factors: &KroneckerFactors,
    damping: f64,
    lr_state: &LrState,
) -> Result<(), OptimError> {
    preconditioned_step(params, grads, factors, damping, lr_state)
}

/// Exact natural step for the log-std parameters: the Fisher block of a
/// diagonal Gaussian in log-sigma coordinates is 2 I.
pub fn log_std_natural_step(
    log_std: &mut Array1<f64>,
    grad: &Array1<f64>,
    damping: f64,
    lr_state: &LrState,
) -> Result<(), OptimError> {
    if grad.len() != log_std.len() {
        return Err(OptimError::ShapeMismatch {
            context: "log_std grad",
            expected: log_std.len(),
            got: grad.len(),
        });
    }
    let scale = lr_state.eta / (2.0 + damping);
    log_std.zip_mut_with(grad, |p, &g| *p -= scale * g);
    if !log_std.iter().all(|v| v.is_finite()) {
        return Err(OptimError::NonFiniteUpdate { layer: 0 });
    }
    Ok(())
}
