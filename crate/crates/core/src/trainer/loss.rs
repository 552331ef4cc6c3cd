//! Pure per-sample loss arithmetic for the clipped surrogate objective and
//! the squared-error value loss.

/// pi_new / pi_old computed in log space.
pub fn policy_ratio(logp_new: f64, logp_old: f64) -> f64 {
    (logp_new - logp_old).exp()
}

/// Per-sample clipped objective term (to be batch-averaged and maximized):
/// min(r * A, clip(r, 1-eps, 1+eps) * A).
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    unclipped.min(clipped)
}

/// Derivative of the per-sample clipped objective w.r.t. the new log-prob.
/// When the unclipped branch is active (ties included) the derivative is
/// r * A; once the clipped branch is strictly smaller the term is constant
/// in the ratio and the derivative vanishes. Inside the clip band the two
/// branches coincide bit-exactly, so at ratio == 1 this equals the vanilla
/// surrogate derivative exactly.
pub fn clipped_surrogate_dlogp(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if unclipped <= clipped {
        unclipped
    } else {
        0.0
    }
}

/// Derivative of the unclipped surrogate r * A w.r.t. the new log-prob.
pub fn vanilla_surrogate_dlogp(ratio: f64, advantage: f64) -> f64 {
    ratio * advantage
}

/// 0.5 * mean((V - R)^2); the 1/2 keeps the head gradient at (V - R).
pub fn value_loss(values_pred: &[f64], returns: &[f64]) -> f64 {
    assert_eq!(values_pred.len(), returns.len());
    let n = values_pred.len().max(1) as f64;
    values_pred
        .iter()
        .zip(returns)
        .map(|(v, r)| 0.5 * (v - r) * (v - r))
        .sum::<f64>()
        / n
}
