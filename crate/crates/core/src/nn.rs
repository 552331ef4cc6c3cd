//! Fully-connected actor and critic networks with manual forward/backward
//! passes. The forward pass records per-layer inputs (with a homogeneous
//! bias coordinate) and pre-activations; the backward pass exposes
//! per-sample pre-activation gradients so curvature factors can be
//! estimated from the same machinery that produces parameter gradients.
//!
//! Hidden activations are tanh; heads are linear.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::NnError;

pub const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone)]
pub struct Layer {
    /// out x in
    pub weight: Array2<f64>,
    /// out
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Parameters of a multi-layer perceptron. Consecutive layer dimensions
/// must chain; constructors uphold that invariant.
#[derive(Debug, Clone)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    /// Scaled uniform fan-in init: weights U(-1/sqrt(in), 1/sqrt(in)),
    /// biases zero. Fully determined by `seed`.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output dims");
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let (inp, out) = (w[0], w[1]);
            let scale = 1.0 / (inp as f64).sqrt();
            let weight = Array2::from_shape_fn((out, inp), |_| rng.gen_range(-scale..scale));
            layers.push(Layer {
                weight,
                bias: Array1::zeros(out),
            });
        }
        Self { layers }
    }

    pub fn zeros(layer_sizes: &[usize]) -> Self {
        assert!(layer_sizes.len() >= 2);
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Self {
        for pair in layers.windows(2) {
            assert_eq!(
                pair[0].out_dim(),
                pair[1].in_dim(),
                "layer dimensions must chain"
            );
        }
        assert!(!layers.is_empty());
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.in_dim()];
        sizes.extend(self.layers.iter().map(|l| l.out_dim()));
        sizes
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }
}

/// Per-layer records captured during a forward pass: the layer input with
/// an appended homogeneous 1 (so factor statistics cover weights and biases
/// jointly) and the pre-activation values.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// batch x (in_l + 1), last column all ones
    pub layer_inputs: Vec<Array2<f64>>,
    /// batch x out_l
    pub pre_activations: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.layer_inputs.len()
    }

    pub fn batch_size(&self) -> usize {
        self.layer_inputs[0].nrows()
    }
}

fn with_homogeneous(x: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = x.dim();
    let mut out = Array2::ones((rows, cols + 1));
    out.slice_mut(ndarray::s![.., ..cols]).assign(x);
    out
}

/// Forward pass over a batch of inputs (batch x in_dim). Returns the head
/// outputs (batch x out_dim) and the trace needed for backward and for
/// curvature statistics.
pub fn forward(params: &MlpParams, inputs: &Array2<f64>) -> Result<(Array2<f64>, ForwardTrace), NnError> {
    if inputs.ncols() != params.in_dim() {
        return Err(NnError::ShapeMismatch {
            context: "forward input dim",
            expected: params.in_dim(),
            got: inputs.ncols(),
        });
    }
    let depth = params.num_layers();
    let mut layer_inputs = Vec::with_capacity(depth);
    let mut pre_activations = Vec::with_capacity(depth);
    let mut h = inputs.clone();
    for (idx, layer) in params.layers.iter().enumerate() {
        layer_inputs.push(with_homogeneous(&h));
        let mut pre = h.dot(&layer.weight.t());
        pre += &layer.bias;
        if pre.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteOutput { layer: idx });
        }
        h = if idx + 1 == depth {
            pre.clone()
        } else {
            pre.mapv(f64::tanh)
        };
        pre_activations.push(pre);
    }
    Ok((
        h,
        ForwardTrace {
            layer_inputs,
            pre_activations,
        },
    ))
}

/// Gradients of the batch-mean loss for a single layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    /// out x in
    pub weight: Array2<f64>,
    /// out
    pub bias: Array1<f64>,
}

impl LayerGrads {
    /// out x (in + 1) with the bias gradient as the last column; this is the
    /// layout the Kronecker-factored preconditioner operates on.
    pub fn combined(&self) -> Array2<f64> {
        let (out, inp) = self.weight.dim();
        let mut c = Array2::zeros((out, inp + 1));
        c.slice_mut(ndarray::s![.., ..inp]).assign(&self.weight);
        c.slice_mut(ndarray::s![.., inp]).assign(&self.bias);
        c
    }

    pub fn from_combined(c: &Array2<f64>) -> Self {
        let (_, inp1) = c.dim();
        let inp = inp1 - 1;
        Self {
            weight: c.slice(ndarray::s![.., ..inp]).to_owned(),
            bias: c.slice(ndarray::s![.., inp]).to_owned(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackwardResult {
    /// Gradients of the scalar batch-mean loss, one entry per layer.
    pub layer_grads: Vec<LayerGrads>,
    /// Per-sample gradients of the per-sample loss w.r.t. each layer's
    /// pre-activations (batch x out_l); no 1/batch scaling. These feed the
    /// G-side curvature factors.
    pub pre_activation_grads: Vec<Array2<f64>>,
}

/// Backpropagates `head_grads` (batch x out_dim, the gradient of each
/// sample's loss w.r.t. the network output) through `trace`.
///
/// Weight/bias gradients are for the batch-mean loss; the exposed
/// pre-activation gradients are per-sample and unscaled.
pub fn backward(
    params: &MlpParams,
    trace: &ForwardTrace,
    head_grads: &Array2<f64>,
) -> Result<BackwardResult, NnError> {
    let depth = params.num_layers();
    if trace.depth() != depth {
        return Err(NnError::ShapeMismatch {
            context: "backward trace depth",
            expected: depth,
            got: trace.depth(),
        });
    }
    if head_grads.ncols() != params.out_dim() {
        return Err(NnError::ShapeMismatch {
            context: "backward head grad dim",
            expected: params.out_dim(),
            got: head_grads.ncols(),
        });
    }
    let batch = trace.batch_size();
    if head_grads.nrows() != batch {
        return Err(NnError::ShapeMismatch {
            context: "backward head grad batch",
            expected: batch,
            got: head_grads.nrows(),
        });
    }
    let inv_batch = 1.0 / batch as f64;

    let mut layer_grads = vec![
        LayerGrads {
            weight: Array2::zeros((0, 0)),
            bias: Array1::zeros(0),
        };
        depth
    ];
    let mut pre_grads: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); depth];

    let mut delta = head_grads.clone();
    for idx in (0..depth).rev() {
        let inputs = &trace.layer_inputs[idx];
        let combined = delta.t().dot(inputs) * inv_batch;
        layer_grads[idx] = LayerGrads::from_combined(&combined);
        pre_grads[idx] = delta.clone();
        if idx > 0 {
            // d loss / d h_{idx-1}, then through tanh. The activation values
            // are the previous columns of this layer's input.
            let dh = delta.dot(&params.layers[idx].weight);
            let in_dim = params.layers[idx].in_dim();
            let acts = inputs.slice(ndarray::s![.., ..in_dim]);
            delta = &dh * &acts.mapv(|a| 1.0 - a * a);
        }
    }
    Ok(BackwardResult {
        layer_grads,
        pre_activation_grads: pre_grads,
    })
}

/// Diagonal Gaussian head for one state.
#[derive(Debug, Clone)]
pub struct GaussianPolicyHead {
    pub mean: Array1<f64>,
    pub log_std: Array1<f64>,
}

impl GaussianPolicyHead {
    pub fn std(&self) -> Array1<f64> {
        self.log_std.mapv(f64::exp)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Batch of Gaussian heads: per-state means plus the shared state-independent
/// log-std parameter vector.
#[derive(Debug, Clone)]
pub struct GaussianHeads {
    pub means: Array2<f64>,
    pub log_std: Array1<f64>,
}

impl GaussianHeads {
    pub fn len(&self) -> usize {
        self.means.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.means.nrows() == 0
    }

    pub fn head(&self, i: usize) -> GaussianPolicyHead {
        GaussianPolicyHead {
            mean: self.means.row(i).to_owned(),
            log_std: self.log_std.clone(),
        }
    }

    /// Log-density of `actions` (batch x act_dim) row-by-row.
    pub fn log_probs(&self, actions: &Array2<f64>) -> Array1<f64> {
        let std = self.log_std.mapv(f64::exp);
        let mut out = Array1::zeros(self.len());
        for (i, slot) in out.iter_mut().enumerate() {
            let mut lp = 0.0;
            for d in 0..self.log_std.len() {
                let z = (actions[[i, d]] - self.means[[i, d]]) / std[d];
                lp += -0.5 * z * z - self.log_std[d] - 0.5 * LN_2PI;
            }
            *slot = lp;
        }
        out
    }

    /// Per-sample gradient of log pi(a|s) w.r.t. the mean outputs:
    /// (a - mu) / sigma^2. Shape batch x act_dim.
    pub fn dlogp_dmean(&self, actions: &Array2<f64>) -> Array2<f64> {
        let var = self.log_std.mapv(|l| (2.0 * l).exp());
        let mut out = Array2::zeros(self.means.raw_dim());
        for i in 0..self.len() {
            for d in 0..self.log_std.len() {
                out[[i, d]] = (actions[[i, d]] - self.means[[i, d]]) / var[d];
            }
        }
        out
    }

    /// Per-sample gradient of log pi(a|s) w.r.t. log_std: z^2 - 1 per dim.
    pub fn dlogp_dlogstd(&self, actions: &Array2<f64>) -> Array2<f64> {
        let std = self.log_std.mapv(f64::exp);
        let mut out = Array2::zeros(self.means.raw_dim());
        for i in 0..self.len() {
            for d in 0..self.log_std.len() {
                let z = (actions[[i, d]] - self.means[[i, d]]) / std[d];
                out[[i, d]] = z * z - 1.0;
            }
        }
        out
    }

    /// Draws one action per head: a = mu + sigma * z.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let std = self.log_std.mapv(f64::exp);
        let mut out = self.means.clone();
        for i in 0..self.len() {
            for d in 0..self.log_std.len() {
                let z: f64 = rng.sample(StandardNormal);
                out[[i, d]] += std[d] * z;
            }
        }
        out
    }

    /// Mean KL(self || other) over the batch, assuming matching state order.
    pub fn mean_kl(&self, other: &GaussianHeads) -> f64 {
        assert_eq!(self.len(), other.len());
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..n {
            total += kl_diag_gaussian(&self.head(i), &other.head(i));
        }
        total / n as f64
    }
}

/// Gaussian policy: mean network plus a learned state-independent log-std.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub net: MlpParams,
    pub log_std: Array1<f64>,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, hidden: &[usize], action_dim: usize, seed: u64) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        Self {
            net: MlpParams::new(&sizes, seed),
            log_std: Array1::zeros(action_dim),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }
}

/// Evaluates the policy on a batch of states.
pub fn forward_policy(
    policy: &GaussianPolicy,
    states: &Array2<f64>,
) -> Result<(GaussianHeads, ForwardTrace), NnError> {
    let (means, trace) = forward(&policy.net, states)?;
    Ok((
        GaussianHeads {
            means,
            log_std: policy.log_std.clone(),
        },
        trace,
    ))
}

/// Evaluates the scalar value network on a batch of states.
pub fn forward_value(
    params: &MlpParams,
    states: &Array2<f64>,
) -> Result<(Array1<f64>, ForwardTrace), NnError> {
    let (out, trace) = forward(params, states)?;
    debug_assert_eq!(out.ncols(), 1, "value network must have a scalar head");
    Ok((out.index_axis(Axis(1), 0).to_owned(), trace))
}

/// log pi(a | head) for a diagonal Gaussian.
pub fn log_prob(head: &GaussianPolicyHead, action: &Array1<f64>) -> f64 {
    assert_eq!(head.dim(), action.len());
    let mut lp = 0.0;
    for d in 0..head.dim() {
        let sigma = head.log_std[d].exp();
        let z = (action[d] - head.mean[d]) / sigma;
        lp += -0.5 * z * z - head.log_std[d] - 0.5 * LN_2PI;
    }
    lp
}

/// a = mu + sigma * z with z standard normal from `rng`.
pub fn sample_action(head: &GaussianPolicyHead, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let mut a = head.mean.clone();
    for d in 0..head.dim() {
        let z: f64 = rng.sample(StandardNormal);
        a[d] += head.log_std[d].exp() * z;
    }
    a
}

/// KL(p || q) between diagonal Gaussians:
/// sum_d [ log(sq/sp) + (sp^2 + (mp - mq)^2) / (2 sq^2) - 1/2 ].
pub fn kl_diag_gaussian(p: &GaussianPolicyHead, q: &GaussianPolicyHead) -> f64 {
    assert_eq!(p.dim(), q.dim());
    let mut kl = 0.0;
    for d in 0..p.dim() {
        let (lp, lq) = (p.log_std[d], q.log_std[d]);
        let vp = (2.0 * lp).exp();
        let vq = (2.0 * lq).exp();
        let dm = p.mean[d] - q.mean[d];
        kl += lq - lp + (vp + dm * dm) / (2.0 * vq) - 0.5;
    }
    kl
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Naive forward pass with scalar loops; independent of the ndarray path.
    fn naive_forward(params: &MlpParams, input: &[f64]) -> Vec<f64> {
        let mut h: Vec<f64> = input.to_vec();
        let depth = params.num_layers();
        for (idx, layer) in params.layers().iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim()];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut acc = layer.bias[o];
                for (i, hi) in h.iter().enumerate() {
                    acc += layer.weight[[o, i]] * hi;
                }
                *slot = if idx + 1 == depth { acc } else { acc.tanh() };
            }
            h = next;
        }
        h
    }

    #[test]
    fn zero_network_outputs_zero_mean_unit_std() {
        let policy = GaussianPolicy {
            net: MlpParams::zeros(&[3, 4, 2]),
            log_std: Array1::zeros(2),
        };
        let states = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
        let (heads, _) = forward_policy(&policy, &states).unwrap();
        for i in 0..5 {
            let h = heads.head(i);
            assert!(h.mean.iter().all(|&m| m == 0.0));
            assert!(h.std().iter().all(|&s| s == 1.0));
        }
    }

    #[test]
    fn single_linear_layer_by_hand() {
        // mean of state (1, 0) is the first weight column.
        let params = MlpParams::from_layers(vec![Layer {
            weight: arr2(&[[2.0, -1.0], [0.5, 3.0]]),
            bias: Array1::zeros(2),
        }]);
        let states = arr2(&[[1.0, 0.0]]);
        let (out, _) = forward(&params, &states).unwrap();
        assert_eq!(out[[0, 0]], 2.0);
        assert_eq!(out[[0, 1]], 0.5);
    }

    #[test]
    fn forward_matches_naive_reimplementation() {
        let params = MlpParams::new(&[4, 8, 8, 2], 99);
        let mut r = rng(5);
        let states = Array2::from_shape_fn((5, 4), |_| r.gen_range(-2.0..2.0));
        let (out, _) = forward(&params, &states).unwrap();
        for i in 0..5 {
            let row: Vec<f64> = states.row(i).to_vec();
            let naive = naive_forward(&params, &row);
            for d in 0..2 {
                assert!(
                    (out[[i, d]] - naive[d]).abs() < 1e-12,
                    "mismatch at ({i},{d})"
                );
            }
        }
    }

    #[test]
    fn forward_value_matches_naive() {
        let params = MlpParams::new(&[3, 6, 1], 123);
        let mut r = rng(6);
        let states = Array2::from_shape_fn((4, 3), |_| r.gen_range(-1.0..1.0));
        let (vals, _) = forward_value(&params, &states).unwrap();
        for i in 0..4 {
            let naive = naive_forward(&params, &states.row(i).to_vec());
            assert!((vals[i] - naive[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_value_zero_network() {
        let params = MlpParams::zeros(&[3, 4, 1]);
        let states = Array2::from_shape_fn((3, 3), |(i, j)| (i + j) as f64);
        let (vals, _) = forward_value(&params, &states).unwrap();
        assert!(vals.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_value_linear_dot_product() {
        let params = MlpParams::from_layers(vec![Layer {
            weight: arr2(&[[1.0, 2.0, -0.5]]),
            bias: arr1(&[0.25]),
        }]);
        let states = arr2(&[[2.0, -1.0, 4.0]]);
        let (vals, _) = forward_value(&params, &states).unwrap();
        assert!((vals[0] - (2.0 - 2.0 - 2.0 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn forward_determinism_bit_identical() {
        let params = MlpParams::new(&[4, 16, 16, 3], 7);
        let mut r = rng(8);
        let states = Array2::from_shape_fn((9, 4), |_| r.gen_range(-3.0..3.0));
        let (a, _) = forward(&params, &states).unwrap();
        let (b, _) = forward(&params, &states).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_output_reported_with_layer() {
        let mut params = MlpParams::new(&[2, 3, 1], 1);
        params.layers_mut()[1].weight[[0, 0]] = f64::INFINITY;
        let states = arr2(&[[1.0, 1.0]]);
        match forward(&params, &states) {
            Err(NnError::NonFiniteOutput { layer }) => assert_eq!(layer, 1),
            other => panic!("expected NonFiniteOutput, got {other:?}"),
        }
    }

    #[test]
    fn log_prob_standard_normal_at_mode() {
        let head = GaussianPolicyHead {
            mean: arr1(&[0.0]),
            log_std: arr1(&[0.0]),
        };
        let lp = log_prob(&head, &arr1(&[0.0]));
        assert!((lp + 0.5 * LN_2PI).abs() < 1e-15);
        assert!((lp + 0.9189385332046727).abs() < 1e-12);
    }

    #[test]
    fn log_prob_independence_sum() {
        let head = GaussianPolicyHead {
            mean: arr1(&[0.0, 0.0]),
            log_std: arr1(&[0.0, 0.0]),
        };
        let lp = log_prob(&head, &arr1(&[0.0, 0.0]));
        assert!((lp + LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn log_prob_direct_formula_evaluation() {
        // mu = 0.3, sigma = 0.5, a = 1.2; direct density formula.
        let head = GaussianPolicyHead {
            mean: arr1(&[0.3]),
            log_std: arr1(&[0.5f64.ln()]),
        };
        let lp = log_prob(&head, &arr1(&[1.2]));
        let sigma: f64 = 0.5;
        let direct =
            (1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt())) * (-0.5 * (0.9f64 / 0.5).powi(2)).exp();
        assert!((lp - direct.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_prob_density_integrates_to_one() {
        // Trapezoid quadrature of exp(log_prob) over [-8 sigma, 8 sigma].
        let mu = 0.7;
        let sigma = 1.3f64;
        let head = GaussianPolicyHead {
            mean: arr1(&[mu]),
            log_std: arr1(&[sigma.ln()]),
        };
        let n = 40_000;
        let lo = mu - 8.0 * sigma;
        let hi = mu + 8.0 * sigma;
        let hstep = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * hstep;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * log_prob(&head, &arr1(&[x])).exp();
        }
        total *= hstep;
        assert!((total - 1.0).abs() < 1e-6, "integral {total}");
    }

    #[test]
    fn sample_action_degenerate_noise() {
        let head = GaussianPolicyHead {
            mean: arr1(&[1.5, -0.5]),
            log_std: arr1(&[-20.0, -20.0]),
        };
        let mut r = rng(3);
        let a = sample_action(&head, &mut r);
        assert!((a[0] - 1.5).abs() < 1e-6);
        assert!((a[1] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn sample_action_deterministic_for_fixed_seed() {
        let head = GaussianPolicyHead {
            mean: arr1(&[0.2, 0.4]),
            log_std: arr1(&[0.1, -0.3]),
        };
        let a = sample_action(&head, &mut rng(77));
        let b = sample_action(&head, &mut rng(77));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_action_clt_bound() {
        let head = GaussianPolicyHead {
            mean: arr1(&[1.0]),
            log_std: arr1(&[2.0f64.ln()]),
        };
        let mut r = rng(11);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += sample_action(&head, &mut r)[0];
        }
        let mean = acc / n as f64;
        let bound = 3.0 * 2.0 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < bound, "mean {mean}, bound {bound}");
    }

    #[test]
    fn kl_identical_heads_is_zero() {
        let p = GaussianPolicyHead {
            mean: arr1(&[0.3, -1.0]),
            log_std: arr1(&[0.2, 0.0]),
        };
        assert_eq!(kl_diag_gaussian(&p, &p.clone()), 0.0);
    }

    #[test]
    fn kl_mean_shift_closed_form() {
        let p = GaussianPolicyHead {
            mean: arr1(&[0.0]),
            log_std: arr1(&[0.0]),
        };
        let q = GaussianPolicyHead {
            mean: arr1(&[0.7]),
            log_std: arr1(&[0.0]),
        };
        assert!((kl_diag_gaussian(&p, &q) - 0.7 * 0.7 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let p = GaussianPolicyHead {
            mean: arr1(&[0.0]),
            log_std: arr1(&[0.0]),
        };
        let q = GaussianPolicyHead {
            mean: arr1(&[0.5]),
            log_std: arr1(&[1.7f64.ln()]),
        };
        let analytic = kl_diag_gaussian(&p, &q);
        let mut r = rng(13);
        let n = 1_000_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let a = sample_action(&p, &mut r);
            let d = log_prob(&p, &a) - log_prob(&q, &a);
            acc += d;
            acc2 += d * d;
        }
        let mc = acc / n as f64;
        let var = (acc2 / n as f64 - mc * mc).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mc - analytic).abs() < 3.0 * se,
            "mc {mc}, analytic {analytic}, se {se}"
        );
    }

    #[test]
    fn kl_nonnegative_property() {
        let mut r = rng(21);
        for _ in 0..500 {
            let p = GaussianPolicyHead {
                mean: arr1(&[r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)]),
                log_std: arr1(&[r.gen_range(-2.0..1.0), r.gen_range(-2.0..1.0)]),
            };
            let q = GaussianPolicyHead {
                mean: arr1(&[r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)]),
                log_std: arr1(&[r.gen_range(-2.0..1.0), r.gen_range(-2.0..1.0)]),
            };
            let kl = kl_diag_gaussian(&p, &q);
            assert!(kl >= 0.0, "negative KL {kl}");
        }
    }

    #[test]
    fn backward_zero_head_gradient() {
        let params = MlpParams::new(&[3, 5, 2], 4);
        let mut r = rng(4);
        let states = Array2::from_shape_fn((6, 3), |_| r.gen_range(-1.0..1.0));
        let (_, trace) = forward(&params, &states).unwrap();
        let res = backward(&params, &trace, &Array2::zeros((6, 2))).unwrap();
        for lg in &res.layer_grads {
            assert!(lg.weight.iter().all(|&v| v == 0.0));
            assert!(lg.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_single_linear_layer_chain_rule() {
        // loss_b = c . out_b  =>  dW = mean_b(c x_b^T), db = c.
        let params = MlpParams::from_layers(vec![Layer {
            weight: arr2(&[[0.0, 0.0], [0.0, 0.0]]),
            bias: Array1::zeros(2),
        }]);
        let states = arr2(&[[1.0, 2.0], [3.0, -1.0]]);
        let (_, trace) = forward(&params, &states).unwrap();
        let c = arr2(&[[2.0, -1.0], [2.0, -1.0]]);
        let res = backward(&params, &trace, &c).unwrap();
        let g = &res.layer_grads[0];
        // mean over batch of c_o * x_i
        assert!((g.weight[[0, 0]] - (2.0 * 1.0 + 2.0 * 3.0) / 2.0).abs() < 1e-15);
        assert!((g.weight[[0, 1]] - (2.0 * 2.0 - 2.0) / 2.0).abs() < 1e-15);
        assert!((g.weight[[1, 0]] - (-1.0 - 3.0) / 2.0).abs() < 1e-15);
        assert!((g.bias[0] - 2.0).abs() < 1e-15);
        assert!((g.bias[1] + 1.0).abs() < 1e-15);
    }

    /// Quadratic loss L = mean_b 0.5 ||f(x_b) - y_b||^2 against central
    /// finite differences over every parameter coordinate.
    fn grad_check_shape(sizes: &[usize], seed: u64) {
        let params = MlpParams::new(sizes, seed);
        let mut r = rng(seed ^ 0xABCD);
        let batch = 4;
        let states = Array2::from_shape_fn((batch, sizes[0]), |_| r.gen_range(-1.5..1.5));
        let targets = Array2::from_shape_fn((batch, *sizes.last().unwrap()), |_| {
            r.gen_range(-1.0..1.0)
        });

        let loss = |p: &MlpParams| -> f64 {
            let (out, _) = forward(p, &states).unwrap();
            let d = &out - &targets;
            d.iter().map(|v| 0.5 * v * v).sum::<f64>() / batch as f64
        };

        let (out, trace) = forward(&params, &states).unwrap();
        let head_grads = &out - &targets;
        let res = backward(&params, &trace, &head_grads).unwrap();

        let eps = 1e-5;
        for (li, lg) in res.layer_grads.iter().enumerate() {
            let (od, id) = lg.weight.dim();
            for o in 0..od {
                for i in 0..id {
                    let mut plus = params.clone();
                    plus.layers_mut()[li].weight[[o, i]] += eps;
                    let mut minus = params.clone();
                    minus.layers_mut()[li].weight[[o, i]] -= eps;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                    let an = lg.weight[[o, i]];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                    assert!(
                        rel < 1e-4,
                        "weight grad mismatch layer {li} ({o},{i}): fd={fd:e} an={an:e} rel={rel:e}"
                    );
                }
                let mut plus = params.clone();
                plus.layers_mut()[li].bias[o] += eps;
                let mut minus = params.clone();
                minus.layers_mut()[li].bias[o] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let an = lg.bias[o];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(rel < 1e-4, "bias grad mismatch layer {li} ({o}): rel={rel:e}");
            }
        }
    }

    #[test]
    fn gradient_check_all_shapes() {
        grad_check_shape(&[3, 8, 8, 2], 101);
        grad_check_shape(&[4, 8, 8, 2], 102);
        grad_check_shape(&[2, 5, 1], 103);
        grad_check_shape(&[3, 1], 104);
        grad_check_shape(&[1, 7, 3], 105);
    }

    #[test]
    fn policy_log_prob_gradient_check_including_log_std() {
        // L = mean_b -log pi(a_b | s_b); analytic grads assembled from
        // dlogp_dmean / dlogp_dlogstd, checked against finite differences.
        let mut policy = GaussianPolicy::new(3, &[6], 2, 31);
        policy.log_std = arr1(&[0.3, -0.2]);
        let mut r = rng(32);
        let batch = 5;
        let states = Array2::from_shape_fn((batch, 3), |_| r.gen_range(-1.0..1.0));
        let actions = Array2::from_shape_fn((batch, 2), |_| r.gen_range(-2.0..2.0));

        let loss = |p: &GaussianPolicy| -> f64 {
            let (heads, _) = forward_policy(p, &states).unwrap();
            -heads.log_probs(&actions).sum() / batch as f64
        };

        let (heads, trace) = forward_policy(&policy, &states).unwrap();
        let head_grads = heads.dlogp_dmean(&actions).mapv(|v| -v);
        let res = backward(&policy.net, &trace, &head_grads).unwrap();
        let logstd_grad = heads
            .dlogp_dlogstd(&actions)
            .mean_axis(Axis(0))
            .unwrap()
            .mapv(|v| -v);

        let eps = 1e-5;
        for (li, lg) in res.layer_grads.iter().enumerate() {
            let (od, id) = lg.weight.dim();
            for o in 0..od {
                for i in 0..id {
                    let mut plus = policy.clone();
                    plus.net.layers_mut()[li].weight[[o, i]] += eps;
                    let mut minus = policy.clone();
                    minus.net.layers_mut()[li].weight[[o, i]] -= eps;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                    let an = lg.weight[[o, i]];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                    assert!(rel < 1e-4, "policy weight grad layer {li} ({o},{i}) rel={rel:e}");
                }
            }
        }
        for d in 0..2 {
            let mut plus = policy.clone();
            plus.log_std[d] += eps;
            let mut minus = policy.clone();
            minus.log_std[d] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let an = logstd_grad[d];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-4, "log_std grad dim {d} rel={rel:e}");
        }
    }

    #[test]
    fn backward_shape_mismatch() {
        let params = MlpParams::new(&[3, 4, 2], 9);
        let states = Array2::zeros((2, 3));
        let (_, trace) = forward(&params, &states).unwrap();
        let bad = Array2::zeros((2, 5));
        assert!(matches!(
            backward(&params, &trace, &bad),
            Err(NnError::ShapeMismatch { .. })
        ));
    }
}
