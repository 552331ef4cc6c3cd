//! Torque-limited pendulum swing-up.
//!
//! The pole hangs from a frictionless-except-for-viscous-damping pivot;
//! theta = 0 is upright. Observations are (cos theta, sin theta, theta_dot)
//! so the angle wrap never shows up in the state the agent sees. The reward
//! is -(theta_wrapped^2 + 0.1 theta_dot^2 + 0.001 u^2), maximal (zero) when
//! balanced upright at rest with no torque.
//!
//! Dynamics: I theta_dd = m g (l/2) sin(theta) + u - b theta_dot with
//! I = m l^2 / 3, integrated by semi-implicit Euler at DT per step.

use ndarray::{arr1, Array1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{clip_action, EnvSpec, Environment, StepResult};
use crate::error::EnvError;

pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const DT: f64 = 0.05;
pub const DAMPING: f64 = 0.05;
pub const MAX_TORQUE: f64 = 2.0;
pub const MAX_STEPS: usize = 200;

/// Moment of inertia of a uniform rod about its end.
pub const INERTIA: f64 = MASS * LENGTH * LENGTH / 3.0;

/// Conservative bound on |theta_dot|: beyond gravity + max torque the
/// damping torque dominates, so speeds cannot grow past roughly
/// (m g l/2 + u_max) / b; documented with margin.
pub const SPEED_BOUND: f64 = 150.0;

/// Documented reward bounds and reference episode returns. The reference
/// returns are empirical (seeded measurement, 200-step episodes): a
/// uniform-random policy and a scripted energy-pumping + PD balance
/// controller.
pub const REWARD_LOWER_BOUND: f64 = -(9.8696 + 0.1 * SPEED_BOUND * SPEED_BOUND + 0.001 * 4.0) - 1.0;
pub const RANDOM_POLICY_EPISODE_REWARD: f64 = -1385.0;
pub const NEAR_OPTIMAL_EPISODE_REWARD: f64 = -200.0;

pub struct PendulumEnv {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    steps: usize,
    clip_events: u64,
}

impl PendulumEnv {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                id: "pendulum",
                obs_dim: 3,
                action_dim: 1,
                max_episode_steps: MAX_STEPS,
                action_bounds: vec![(-MAX_TORQUE, MAX_TORQUE)],
                reward_lower_bound: REWARD_LOWER_BOUND,
            },
            theta: 0.0,
            theta_dot: 0.0,
            steps: 0,
            clip_events: 0,
        }
    }

    fn obs(&self) -> Array1<f64> {
        arr1(&[self.theta.cos(), self.theta.sin(), self.theta_dot])
    }

    /// Angle wrapped into [-pi, pi].
    pub fn wrap_angle(theta: f64) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut t = (theta + std::f64::consts::PI) % two_pi;
        if t < 0.0 {
            t += two_pi;
        }
        t - std::f64::consts::PI
    }

    /// Total mechanical energy: kinetic + gravitational potential of the
    /// center of mass (zero level at the pivot height).
    pub fn mechanical_energy(theta: f64, theta_dot: f64) -> f64 {
        0.5 * INERTIA * theta_dot * theta_dot + MASS * GRAVITY * (LENGTH / 2.0) * theta.cos()
    }

    /// Internal (theta, theta_dot); used by physics tests.
    pub fn internal_state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    pub fn set_internal_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }
}

impl Default for PendulumEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PendulumEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        self.theta_dot = rng.gen_range(-1.0..1.0);
        self.steps = 0;
        self.obs()
    }

    fn step(&mut self, action: &Array1<f64>) -> Result<StepResult, EnvError> {
        let (a, clipped) = clip_action(action, &self.spec.action_bounds);
        if clipped {
            self.clip_events += 1;
        }
        let u = a[0];

        let theta_w = Self::wrap_angle(self.theta);
        let reward = -(theta_w * theta_w + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);

        let torque = MASS * GRAVITY * (LENGTH / 2.0) * self.theta.sin() + u - DAMPING * self.theta_dot;
        let theta_dd = torque / INERTIA;
        self.theta_dot += theta_dd * DT;
        self.theta += self.theta_dot * DT;
        self.steps += 1;

        if !self.theta.is_finite() || !self.theta_dot.is_finite() {
            return Err(EnvError::NonFiniteState { step: self.steps });
        }
        Ok(StepResult {
            next_state: self.obs(),
            reward,
            done: self.steps >= MAX_STEPS,
        })
    }

    fn action_clip_events(&self) -> u64 {
        self.clip_events
    }
}
