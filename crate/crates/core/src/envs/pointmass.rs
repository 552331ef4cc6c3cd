//! 2-d double-integrator reacher: accelerate a point mass toward a goal
//! drawn at reset. Observations are goal-relative, (gx-px, gy-py, vx, vy).
//! Reward is -(squared distance + 0.001 ||a||^2). Semi-implicit Euler with
//! viscous damping on the velocity.

use ndarray::{arr1, Array1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{clip_action, EnvSpec, Environment, StepResult};
use crate::error::EnvError;

pub const DT: f64 = 0.05;
pub const DAMPING: f64 = 0.5;
pub const MAX_ACCEL: f64 = 1.0;
pub const MAX_STEPS: usize = 100;

/// Documented initial-observation distribution: each delta component is the
/// difference of two independent U(-1, 1) draws (mean 0, std sqrt(2/3));
/// velocities start at zero.
pub const INIT_DELTA_STD: f64 = 0.816496580927726;

/// Velocity converges below MAX_ACCEL / DAMPING; positions drift at most
/// that fast for MAX_STEPS. Documented with margin.
pub const REWARD_LOWER_BOUND: f64 = -6000.0;

pub struct PointMassEnv {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    steps: usize,
    clip_events: u64,
}

impl PointMassEnv {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                id: "pointmass",
                obs_dim: 4,
                action_dim: 2,
                max_episode_steps: MAX_STEPS,
                action_bounds: vec![(-MAX_ACCEL, MAX_ACCEL), (-MAX_ACCEL, MAX_ACCEL)],
                reward_lower_bound: REWARD_LOWER_BOUND,
            },
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            steps: 0,
            clip_events: 0,
        }
    }

    fn obs(&self) -> Array1<f64> {
        arr1(&[
            self.goal[0] - self.pos[0],
            self.goal[1] - self.pos[1],
            self.vel[0],
            self.vel[1],
        ])
    }
}

impl Default for PointMassEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PointMassEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.pos = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        self.goal = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        self.vel = [0.0; 2];
        self.steps = 0;
        self.obs()
    }

    fn step(&mut self, action: &Array1<f64>) -> Result<StepResult, EnvError> {
        let (a, clipped) = clip_action(action, &self.spec.action_bounds);
        if clipped {
            self.clip_events += 1;
        }

        let dx = self.goal[0] - self.pos[0];
        let dy = self.goal[1] - self.pos[1];
        let reward = -((dx * dx + dy * dy) + 0.001 * (a[0] * a[0] + a[1] * a[1]));

        for d in 0..2 {
            self.vel[d] += (a[d] - DAMPING * self.vel[d]) * DT;
            self.pos[d] += self.vel[d] * DT;
        }
        self.steps += 1;

        if !self.pos.iter().chain(self.vel.iter()).all(|v| v.is_finite()) {
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
