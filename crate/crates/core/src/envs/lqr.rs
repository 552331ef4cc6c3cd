//! Discrete-time linear-quadratic regulator with process noise.
//!
//! Dynamics: x' = A x + B u + w, w ~ N(0, noise_std^2 I), with stage reward
//! -(x'Qx + u'Ru). The task has an exact optimum: the optimal feedback
//! u = -K* x and its long-run average cost J* = tr(P W) fall out of the
//! discrete algebraic Riccati equation, which makes this environment a
//! ground-truth oracle for the learner.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{clip_action, EnvSpec, Environment, StepResult};
use crate::error::EnvError;
use crate::linalg::{damped_inverse, SymMatrix};

pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;
pub const MAX_STEPS: usize = 100;
pub const NOISE_STD: f64 = 0.1;
pub const MAX_ACTION: f64 = 5.0;
/// Initial states are drawn uniformly from this box, per component.
pub const INIT_BOX: f64 = 0.5;

/// Documented per-step reward bound: states stay within a modest multiple
/// of the initial box over 100 steps for the mildly coupled system below.
pub const REWARD_LOWER_BOUND: f64 = -1.0e6;

/// A discrete-time linear system with quadratic cost.
#[derive(Debug, Clone)]
pub struct LqrSystem {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub q: Array2<f64>,
    pub r: Array2<f64>,
    pub noise_std: f64,
}

impl LqrSystem {
    /// The documented 4-state / 2-action benchmark system: two leaky
    /// discrete integrator pairs (positions x0, x2; velocities x1, x3)
    /// with a one-way cross-coupling. The matrix is upper triangular, so
    /// every eigenvalue is 0.98: open-loop stable, but the shear terms
    /// amplify process noise enough that feedback control pays.
    pub fn benchmark() -> Self {
        let a = Array2::from_shape_vec(
            (4, 4),
            vec![
                0.98, 0.10, 0.0, 0.0, //
                0.0, 0.98, 0.05, 0.0, //
                0.0, 0.0, 0.98, 0.10, //
                0.0, 0.0, 0.0, 0.98,
            ],
        )
        .unwrap();
        let b = Array2::from_shape_vec(
            (4, 2),
            vec![
                0.0, 0.0, //
                0.1, 0.0, //
                0.0, 0.0, //
                0.0, 0.1,
            ],
        )
        .unwrap();
        let q = Array2::eye(4);
        let r = Array2::eye(2) * 0.1;
        Self {
            a,
            b,
            q,
            r,
            noise_std: NOISE_STD,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Process-noise covariance W = noise_std^2 I.
    pub fn noise_cov(&self) -> Array2<f64> {
        Array2::eye(self.state_dim()) * (self.noise_std * self.noise_std)
    }

    pub fn stage_cost(&self, x: &Array1<f64>, u: &Array1<f64>) -> f64 {
        x.dot(&self.q.dot(x)) + u.dot(&self.r.dot(u))
    }
}

/// Solves the discrete algebraic Riccati equation by fixed-point iteration:
/// P <- Q + A'PA - A'PB (R + B'PB)^{-1} B'PA, starting from P = Q, until
/// the max-norm change drops below `tol`.
pub fn solve_dare(
    sys: &LqrSystem,
    tol: f64,
    max_iter: usize,
) -> Result<Array2<f64>, EnvError> {
    let mut p = sys.q.clone();
    for _ in 0..max_iter {
        let bt_p = sys.b.t().dot(&p);
        let inner = SymMatrix::symmetrized(&sys.r + &bt_p.dot(&sys.b));
        let inner_inv = damped_inverse(&inner, 0.0)
            .map_err(|_| EnvError::NoConvergence { iterations: max_iter })?;
        let bt_p_a = bt_p.dot(&sys.a);
        let next = &sys.q + &sys.a.t().dot(&p.dot(&sys.a))
            - &bt_p_a.t().dot(&inner_inv.as_array().dot(&bt_p_a));
        let delta = (&next - &p)
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        p = SymMatrix::symmetrized(next).as_array().clone();
        if delta < tol {
            return Ok(p);
        }
    }
    Err(EnvError::NoConvergence { iterations: max_iter })
}

/// Solves the discrete Lyapunov equation S = M S M' + W by iteration
/// (converges for stable M). Used for policy evaluation of linear gains.
pub fn solve_dlyap(m: &Array2<f64>, w: &Array2<f64>, tol: f64, max_iter: usize) -> Option<Array2<f64>> {
    let mut s = w.clone();
    for _ in 0..max_iter {
        let next = m.dot(&s.dot(&m.t())) + w;
        let delta = (&next - &s).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let scale = next.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if !scale.is_finite() {
            return None;
        }
        s = next;
        if delta < tol * scale.max(1.0) {
            return Some(s);
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct LqrSolution {
    /// Optimal feedback gain; the optimal action is u = -K x.
    pub gain: Array2<f64>,
    /// Long-run average stage cost under the optimal policy: tr(P W).
    pub average_cost: f64,
    /// Riccati solution.
    pub p: Array2<f64>,
}

/// Computes the optimal gain and average cost for `sys`.
pub fn lqr_optimal_for(sys: &LqrSystem) -> Result<LqrSolution, EnvError> {
    let p = solve_dare(sys, 1e-10, 100_000)?;
    let bt_p = sys.b.t().dot(&p);
    let inner = SymMatrix::symmetrized(&sys.r + &bt_p.dot(&sys.b));
    let inner_inv = damped_inverse(&inner, 0.0)
        .map_err(|_| EnvError::NoConvergence { iterations: 0 })?;
    let gain = inner_inv.as_array().dot(&bt_p.dot(&sys.a));
    let average_cost = p.dot(&sys.noise_cov()).diag().sum();
    Ok(LqrSolution {
        gain,
        average_cost,
        p,
    })
}

/// Average stage cost of the linear policy u = -K x, by exact policy
/// evaluation: the stationary state covariance solves a Lyapunov equation.
/// Returns None when the closed loop is unstable.
pub fn linear_policy_average_cost(sys: &LqrSystem, gain: &Array2<f64>) -> Option<f64> {
    let closed = &sys.a - &sys.b.dot(gain);
    let sigma = solve_dlyap(&closed, &sys.noise_cov(), 1e-12, 200_000)?;
    // E[x'(Q + K'RK)x] = tr((Q + K'RK) Sigma)
    let cost_matrix = &sys.q + &gain.t().dot(&sys.r.dot(gain));
    Some(cost_matrix.dot(&sigma).diag().sum())
}

pub struct LqrEnv {
    spec: EnvSpec,
    sys: LqrSystem,
    x: Array1<f64>,
    steps: usize,
    rng: ChaCha8Rng,
    clip_events: u64,
}

impl LqrEnv {
    pub fn new() -> Self {
        let sys = LqrSystem::benchmark();
        Self {
            spec: EnvSpec {
                id: "lqr",
                obs_dim: STATE_DIM,
                action_dim: ACTION_DIM,
                max_episode_steps: MAX_STEPS,
                action_bounds: vec![(-MAX_ACTION, MAX_ACTION); ACTION_DIM],
                reward_lower_bound: REWARD_LOWER_BOUND,
            },
            sys,
            x: Array1::zeros(STATE_DIM),
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            clip_events: 0,
        }
    }

    pub fn system(&self) -> &LqrSystem {
        &self.sys
    }

    /// Optimal gain and average cost for this environment's system.
    pub fn lqr_optimal(&self) -> Result<LqrSolution, EnvError> {
        lqr_optimal_for(&self.sys)
    }
}

impl Default for LqrEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for LqrEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Array1<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.x = Array1::from_shape_fn(STATE_DIM, |_| {
            use rand::Rng;
            self.rng.gen_range(-INIT_BOX..INIT_BOX)
        });
        self.steps = 0;
        self.x.clone()
    }

    fn step(&mut self, action: &Array1<f64>) -> Result<StepResult, EnvError> {
        let (u, clipped) = clip_action(action, &self.spec.action_bounds);
        if clipped {
            self.clip_events += 1;
        }
        let reward = -self.sys.stage_cost(&self.x, &u);
        let noise = Array1::from_shape_fn(STATE_DIM, |_| {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            self.sys.noise_std * z
        });
        self.x = self.sys.a.dot(&self.x) + self.sys.b.dot(&u) + noise;
        self.steps += 1;
        if !self.x.iter().all(|v| v.is_finite()) {
            return Err(EnvError::NonFiniteState { step: self.steps });
        }
        Ok(StepResult {
            next_state: self.x.clone(),
            reward,
            done: self.steps >= MAX_STEPS,
        })
    }

    fn action_clip_events(&self) -> u64 {
        self.clip_events
    }
}
