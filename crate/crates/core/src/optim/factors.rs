//! Per-layer Kronecker factor estimation.
//!
//! Each layer keeps an EMA of two second-moment matrices: A over the layer
//! inputs (with the homogeneous bias coordinate) and G over per-sample
//! pre-activation gradients. For the policy the G statistics come from
//! log-prob gradients of actions re-sampled from the current policy (the
//! true Fisher rather than the empirical one); for the critic they come
//! from the Gaussian observation model with unit variance, i.e. the head
//! gradient is a standard normal draw, which reproduces the Gauss-Newton
//! metric in expectation.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::OptimError;
use crate::linalg::SymMatrix;
use crate::nn::{backward, forward, forward_policy, ForwardTrace, GaussianPolicy, MlpParams};

#[derive(Debug, Clone)]
pub struct LayerFactors {
    /// (in+1) x (in+1) second moments of the homogeneous layer input.
    pub a: SymMatrix,
    /// out x out second moments of per-sample pre-activation gradients.
    pub g: SymMatrix,
}

#[derive(Debug, Clone)]
pub struct KroneckerFactors {
    pub layers: Vec<LayerFactors>,
    pub update_count: u64,
    /// Total EMA weight accumulated so far: w <- decay*w + (1-decay).
    /// Dividing the stored factors by this weight de-biases the EMA started
    /// from zero; the raw EMA recurrence itself is kept untouched.
    pub ema_weight: f64,
}

impl KroneckerFactors {
    /// Zero-initialized factors shaped for `params`.
    pub fn zeros_for(params: &MlpParams) -> Self {
        let layers = params
            .layers()
            .iter()
            .map(|l| LayerFactors {
                a: SymMatrix::zeros(l.in_dim() + 1),
                g: SymMatrix::zeros(l.out_dim()),
            })
            .collect();
        Self {
            layers,
            update_count: 0,
            ema_weight: 0.0,
        }
    }

    /// Folds one batch of statistics into the EMA:
    /// X <- decay*X + (1-decay)*X_batch for both factors of every layer.
    pub fn accumulate(
        &mut self,
        trace: &ForwardTrace,
        sampled_g: &[Array2<f64>],
        decay: f64,
    ) -> Result<(), OptimError> {
        assert!((0.0..1.0).contains(&decay), "decay must be in [0, 1)");
        if trace.depth() != self.layers.len() || sampled_g.len() != self.layers.len() {
            return Err(OptimError::ShapeMismatch {
                context: "factor accumulation depth",
                expected: self.layers.len(),
                got: trace.depth().min(sampled_g.len()),
            });
        }
        for (idx, lf) in self.layers.iter_mut().enumerate() {
            let inputs = &trace.layer_inputs[idx];
            let g = &sampled_g[idx];
            if inputs.ncols() != lf.a.dim() {
                return Err(OptimError::ShapeMismatch {
                    context: "factor A dim",
                    expected: lf.a.dim(),
                    got: inputs.ncols(),
                });
            }
            if g.ncols() != lf.g.dim() {
                return Err(OptimError::ShapeMismatch {
                    context: "factor G dim",
                    expected: lf.g.dim(),
                    got: g.ncols(),
                });
            }
            lf.a.ema_update(&SymMatrix::second_moment(inputs), decay);
            lf.g.ema_update(&SymMatrix::second_moment(g), decay);
        }
        self.update_count += 1;
        self.ema_weight = decay * self.ema_weight + (1.0 - decay);
        Ok(())
    }

    /// De-biased view of layer `idx`: factors divided by the accumulated
    /// EMA weight, so early steps see unbiased batch statistics instead of
    /// the zero-shrunk raw EMA.
    pub fn debiased(&self, idx: usize) -> (SymMatrix, SymMatrix) {
        let w = self.ema_weight.max(f64::MIN_POSITIVE);
        let lf = &self.layers[idx];
        (lf.a.scaled(1.0 / w), lf.g.scaled(1.0 / w))
    }
}

/// Accumulates policy Fisher factor statistics over `states`: actions are
/// re-sampled from the current policy and their log-prob gradient is
/// backpropagated to every layer.
pub fn estimate_policy_factors(
    policy: &GaussianPolicy,
    states: &Array2<f64>,
    factors: &mut KroneckerFactors,
    decay: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(), OptimError> {
    let (heads, trace) = forward_policy(policy, states)?;
    let sampled_actions = heads.sample(rng);
    let head_grads = heads.dlogp_dmean(&sampled_actions);
    let back = backward(&policy.net, &trace, &head_grads)?;
    factors.accumulate(&trace, &back.pre_activation_grads, decay)
}

/// Accumulates critic Gauss-Newton factor statistics over `states`: with
/// targets sampled from N(v, 1), the squared-error head gradient v - t is a
/// standard normal draw.
pub fn estimate_critic_factors(
    critic: &MlpParams,
    states: &Array2<f64>,
    factors: &mut KroneckerFactors,
    decay: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(), OptimError> {
    let (_, trace) = forward(critic, states)?;
    let batch = states.nrows();
    let head_grads = Array2::from_shape_fn((batch, 1), |_| rng.sample::<f64, _>(StandardNormal));
    let back = backward(critic, &trace, &head_grads)?;
    factors.accumulate(&trace, &back.pre_activation_grads, decay)
}
