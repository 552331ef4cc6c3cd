//! First-order baseline optimizers: momentum SGD and an adaptive-moment
//! variant with bias-corrected first/second moment estimates.

use ndarray::{Array1, Array2};

use crate::error::OptimError;
use crate::nn::{LayerGrads, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FirstOrderKind {
    Sgd { momentum: f64 },
    AdaptiveMoment { beta1: f64, beta2: f64, eps: f64 },
}

impl FirstOrderKind {
    pub fn adaptive_default() -> Self {
        FirstOrderKind::AdaptiveMoment {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct TensorState {
    m_w: Array2<f64>,
    v_w: Array2<f64>,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
}

/// Optimizer state for one MLP plus an optional extra parameter vector
/// (the policy's log-std).
#[derive(Debug, Clone)]
pub struct FirstOrderOptimizer {
    kind: FirstOrderKind,
    layers: Vec<TensorState>,
    extra_m: Option<Array1<f64>>,
    extra_v: Option<Array1<f64>>,
    step_count: u64,
}

impl FirstOrderOptimizer {
    pub fn new(params: &MlpParams, kind: FirstOrderKind, extra_dim: Option<usize>) -> Self {
        let layers = params
            .layers()
            .iter()
            .map(|l| TensorState {
                m_w: Array2::zeros((l.out_dim(), l.in_dim())),
                v_w: Array2::zeros((l.out_dim(), l.in_dim())),
                m_b: Array1::zeros(l.out_dim()),
                v_b: Array1::zeros(l.out_dim()),
            })
            .collect();
        Self {
            kind,
            layers,
            extra_m: extra_dim.map(Array1::zeros),
            extra_v: extra_dim.map(Array1::zeros),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to the network and (when present) the extra
    /// vector. Counts as a single optimizer step.
    pub fn step(
        &mut self,
        params: &mut MlpParams,
        grads: &[LayerGrads],
        extra: Option<(&mut Array1<f64>, &Array1<f64>)>,
        lr: f64,
    ) -> Result<(), OptimError> {
        if grads.len() != params.num_layers() {
            return Err(OptimError::ShapeMismatch {
                context: "first-order grads depth",
                expected: params.num_layers(),
                got: grads.len(),
            });
        }
        self.step_count += 1;
        let t = self.step_count;
        match self.kind {
            FirstOrderKind::Sgd { momentum } => {
                for (idx, layer) in params.layers_mut().iter_mut().enumerate() {
                    let st = &mut self.layers[idx];
                    st.m_w
                        .zip_mut_with(&grads[idx].weight, |m, &g| *m = momentum * *m + g);
                    st.m_b
                        .zip_mut_with(&grads[idx].bias, |m, &g| *m = momentum * *m + g);
                    layer.weight.zip_mut_with(&st.m_w, |w, &m| *w -= lr * m);
                    layer.bias.zip_mut_with(&st.m_b, |b, &m| *b -= lr * m);
                    if !layer.weight.iter().all(|v| v.is_finite()) {
                        return Err(OptimError::NonFiniteUpdate { layer: idx });
                    }
                }
                if let Some((vec, grad)) = extra {
                    let m = self.extra_m.as_mut().expect("extra state not allocated");
                    m.zip_mut_with(grad, |m, &g| *m = momentum * *m + g);
                    vec.zip_mut_with(m, |v, &m| *v -= lr * m);
                }
            }
            FirstOrderKind::AdaptiveMoment { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(t as i32);
                let bc2 = 1.0 - beta2.powi(t as i32);
                let adam = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                };
                for (idx, layer) in params.layers_mut().iter_mut().enumerate() {
                    let st = &mut self.layers[idx];
                    for ((p, &g), (m, v)) in layer
                        .weight
                        .iter_mut()
                        .zip(grads[idx].weight.iter())
                        .zip(st.m_w.iter_mut().zip(st.v_w.iter_mut()))
                    {
                        adam(p, g, m, v);
                    }
                    for ((p, &g), (m, v)) in layer
                        .bias
                        .iter_mut()
                        .zip(grads[idx].bias.iter())
                        .zip(st.m_b.iter_mut().zip(st.v_b.iter_mut()))
                    {
                        adam(p, g, m, v);
                    }
                    if !layer.weight.iter().all(|v| v.is_finite()) {
                        return Err(OptimError::NonFiniteUpdate { layer: idx });
                    }
                }
                if let Some((vec, grad)) = extra {
                    let em = self.extra_m.as_mut().expect("extra state not allocated");
                    let ev = self.extra_v.as_mut().expect("extra state not allocated");
                    for ((p, &g), (m, v)) in vec
                        .iter_mut()
                        .zip(grad.iter())
                        .zip(em.iter_mut().zip(ev.iter_mut()))
                    {
                        adam(p, g, m, v);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    fn one_param() -> (MlpParams, Vec<LayerGrads>) {
        let params = MlpParams::from_layers(vec![crate::nn::Layer {
            weight: arr2(&[[1.0]]),
            bias: arr1(&[0.0]),
        }]);
        let grads = vec![LayerGrads {
            weight: arr2(&[[2.0]]),
            bias: arr1(&[0.0]),
        }];
        (params, grads)
    }

    #[test]
    fn plain_sgd_by_hand() {
        let (mut params, grads) = one_param();
        let mut opt = FirstOrderOptimizer::new(&params, FirstOrderKind::Sgd { momentum: 0.0 }, None);
        opt.step(&mut params, &grads, None, 0.1).unwrap();
        assert!((params.layers()[0].weight[[0, 0]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_noop() {
        let mut params = MlpParams::new(&[2, 3], 5);
        let reference = params.clone();
        let grads = vec![LayerGrads {
            weight: Array2::zeros((3, 2)),
            bias: Array1::zeros(3),
        }];
        let mut opt = FirstOrderOptimizer::new(&params, FirstOrderKind::adaptive_default(), None);
        opt.step(&mut params, &grads, None, 0.01).unwrap();
        assert_eq!(params.layers()[0].weight, reference.layers()[0].weight);
        assert_eq!(params.layers()[0].bias, reference.layers()[0].bias);
    }

    #[test]
    fn momentum_accumulates() {
        let (mut params, grads) = one_param();
        let mut opt = FirstOrderOptimizer::new(&params, FirstOrderKind::Sgd { momentum: 0.5 }, None);
        opt.step(&mut params, &grads, None, 0.1).unwrap();
        // m = 2, w = 1 - 0.2 = 0.8
        opt.step(&mut params, &grads, None, 0.1).unwrap();
        // m = 0.5*2 + 2 = 3, w = 0.8 - 0.3 = 0.5
        assert!((params.layers()[0].weight[[0, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adaptive_moment_step_magnitude_converges_to_lr() {
        // With a constant gradient the bias-corrected moments converge to
        // (g, g^2), so the per-step change approaches lr * sign(g).
        let (mut params, grads) = one_param();
        let mut opt = FirstOrderOptimizer::new(&params, FirstOrderKind::adaptive_default(), None);
        let lr = 0.05;
        let mut prev = params.layers()[0].weight[[0, 0]];
        let mut last_step = 0.0;
        for _ in 0..500 {
            opt.step(&mut params, &grads, None, lr).unwrap();
            let cur = params.layers()[0].weight[[0, 0]];
            last_step = prev - cur;
            prev = cur;
        }
        assert!(
            (last_step - lr).abs() < 1e-4,
            "step {last_step} should approach lr {lr}"
        );
    }

    #[test]
    fn extra_vector_is_updated() {
        let (mut params, grads) = one_param();
        let mut opt =
            FirstOrderOptimizer::new(&params, FirstOrderKind::Sgd { momentum: 0.0 }, Some(2));
        let mut extra = arr1(&[1.0, -1.0]);
        let egrad = arr1(&[0.5, 0.5]);
        opt.step(&mut params, &grads, Some((&mut extra, &egrad)), 0.1)
            .unwrap();
        assert!((extra[0] - 0.95).abs() < 1e-15);
        assert!((extra[1] + 1.05).abs() < 1e-15);
    }
}
