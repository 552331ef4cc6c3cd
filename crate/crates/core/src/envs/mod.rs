//! Deterministic, seedable continuous-control environments at desk scale.
//!
//! Three tasks are built in:
//!   - "pendulum": torque-limited pendulum swing-up
//!   - "pointmass": 2-d double-integrator reacher toward a random goal
//!   - "lqr": discrete-time linear-quadratic regulator with process
//!     noise, whose exact optimum is available as an oracle
//!
//! All dynamics integrate with fixed-step semi-implicit Euler where a
//! continuous system is involved. Episodes end at the step limit; none of
//! the tasks has a terminal set, so a `done` flag always means time-limit
//! truncation. A physics blow-up surfaces as `EnvError::NonFiniteState`
//! and ends the episode as a true terminal.

pub mod lqr;
pub mod pendulum;
pub mod pointmass;

pub use lqr::{linear_policy_average_cost, lqr_optimal_for, solve_dare, solve_dlyap, LqrEnv, LqrSolution, LqrSystem};
pub use pendulum::PendulumEnv;
pub use pointmass::PointMassEnv;

use ndarray::Array1;
use std::io::Write;

use crate::error::EnvError;

/// Static description of an environment's interface.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub id: &'static str,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub max_episode_steps: usize,
    /// Per-dimension (lower, upper) action interval.
    pub action_bounds: Vec<(f64, f64)>,
    /// Documented lower bound on the per-step reward (rewards are <= 0 for
    /// all built-in tasks).
    pub reward_lower_bound: f64,
}

/// Outcome of one environment step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_state: Array1<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode. The initial state is fully determined by
    /// `seed`; the episode step counter is zeroed.
    fn reset(&mut self, seed: u64) -> Array1<f64>;

    /// Advances one step. Actions outside the documented bounds are clipped
    /// (and counted; see [`Environment::action_clip_events`]).
    fn step(&mut self, action: &Array1<f64>) -> Result<StepResult, EnvError>;

    /// Number of steps so far in which at least one action component was
    /// clipped to the bounds.
    fn action_clip_events(&self) -> u64;
}

/// Clips `action` into `bounds`, returning whether anything changed.
pub(crate) fn clip_action(action: &Array1<f64>, bounds: &[(f64, f64)]) -> (Array1<f64>, bool) {
    let mut clipped = action.clone();
    let mut any = false;
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        let v = clipped[i].clamp(lo, hi);
        if v != clipped[i] {
            any = true;
        }
        clipped[i] = v;
    }
    (clipped, any)
}

pub const ENV_IDS: [&str; 3] = ["pendulum", "pointmass", "lqr"];

/// Creates an environment by string id ("pendulum", "pointmass", "lqr").
pub fn make_env(id: &str) -> Result<Box<dyn Environment>, EnvError> {
    match id {
        "pendulum" => Ok(Box::new(PendulumEnv::new())),
        "pointmass" => Ok(Box::new(PointMassEnv::new())),
        "lqr" => Ok(Box::new(LqrEnv::new())),
        other => Err(EnvError::UnknownEnv(other.to_string())),
    }
}

/// One row of the trajectory dump format.
#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub step: usize,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Writes the trajectory CSV: columns `step,s0..,a0..,reward,done`.
pub fn write_trajectory_csv<W: Write>(
    out: &mut W,
    obs_dim: usize,
    action_dim: usize,
    rows: &[TrajectoryRow],
) -> std::io::Result<()> {
    let mut header = String::from("step");
    for i in 0..obs_dim {
        header.push_str(&format!(",s{i}"));
    }
    for i in 0..action_dim {
        header.push_str(&format!(",a{i}"));
    }
    header.push_str(",reward,done");
    writeln!(out, "{header}")?;
    for row in rows {
        let mut line = format!("{}", row.step);
        for v in &row.state {
            line.push_str(&format!(",{v}"));
        }
        for v in &row.action {
            line.push_str(&format!(",{v}"));
        }
        line.push_str(&format!(",{},{}", row.reward, if row.done { 1 } else { 0 }));
        writeln!(out, "{line}")?;
    }
    Ok(())
}
