//! Adaptive learning-rate control from an observed KL divergence against a
//! trust-region radius delta:
//!
//!   - KL >= 2*delta      => eta := eta / 1.5
//!   - KL <= delta / 2    => eta := 1.5 * eta
//!   - otherwise            eta unchanged
//!
//! The multiplicative rule alone is unbounded, so eta is additionally
//! clamped into [eta_min, eta_max]; the clamps live in the state and are
//! recorded with every event, making the whole controller a replayable
//! pure state machine.

#[derive(Debug, Clone, PartialEq)]
pub struct KlAdaptEvent {
    pub index: u64,
    pub observed_kl: f64,
    pub eta_after: f64,
}

#[derive(Debug, Clone)]
pub struct LrState {
    pub eta: f64,
    pub delta: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub history: Vec<KlAdaptEvent>,
}

impl LrState {
    pub fn new(eta0: f64, delta: f64, eta_min: f64, eta_max: f64) -> Self {
        assert!(eta0 > 0.0 && delta > 0.0);
        assert!(eta_min > 0.0 && eta_min <= eta_max);
        Self {
            eta: eta0.clamp(eta_min, eta_max),
            delta,
            eta_min,
            eta_max,
            history: Vec::new(),
        }
    }
}

/// Applies the three-branch rule once and appends to the history.
pub fn adapt_learning_rate(state: &mut LrState, observed_kl: f64) {
    debug_assert!(observed_kl >= 0.0, "KL must be nonnegative");
    if observed_kl >= 2.0 * state.delta {
        state.eta /= 1.5;
    } else if observed_kl <= state.delta / 2.0 {
        state.eta *= 1.5;
    }
    state.eta = state.eta.clamp(state.eta_min, state.eta_max);
    state.history.push(KlAdaptEvent {
        index: state.history.len() as u64,
        observed_kl,
        eta_after: state.eta,
    });
}
