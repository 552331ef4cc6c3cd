//! Policy evaluation helpers: frozen-normalizer rollouts with either the
//! mean action (deterministic) or sampled actions.

use ndarray::{Array1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::make_env;
use crate::error::TrainError;
use crate::nn::{forward_policy, GaussianPolicy};
use crate::obs_norm::ObsNormalizer;

fn select_action(
    policy: &GaussianPolicy,
    normalizer: &ObsNormalizer,
    obs: &Array1<f64>,
    deterministic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Array1<f64>, TrainError> {
    let norm = normalizer.normalize(obs);
    let row = norm.insert_axis(Axis(0));
    let (heads, _) = forward_policy(policy, &row)?;
    let action = if deterministic {
        heads.means.row(0).to_owned()
    } else {
        heads.sample(rng).row(0).to_owned()
    };
    Ok(action)
}

/// Mean episode return over `episodes` fresh episodes.
pub fn evaluate_mean_episode_reward(
    policy: &GaussianPolicy,
    normalizer: &ObsNormalizer,
    env_id: &str,
    episodes: usize,
    seed_base: u64,
    deterministic: bool,
) -> Result<f64, TrainError> {
    let mut env = make_env(env_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_base ^ 0x5eed);
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut obs = env.reset(seed_base.wrapping_add(ep as u64));
        loop {
            let action = select_action(policy, normalizer, &obs, deterministic, &mut rng)?;
            let step = env.step(&action)?;
            total += step.reward;
            obs = step.next_state;
            if step.done {
                break;
            }
        }
    }
    Ok(total / episodes as f64)
}

/// Average per-step cost (negated reward) over a long horizon, resetting
/// the environment whenever an episode ends. Used against the Riccati
/// average-cost prediction on the LQR task.
pub fn evaluate_average_stage_cost(
    policy: &GaussianPolicy,
    normalizer: &ObsNormalizer,
    env_id: &str,
    steps: usize,
    seed_base: u64,
    deterministic: bool,
) -> Result<f64, TrainError> {
    let mut env = make_env(env_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_base ^ 0xc057);
    let mut episode = 0u64;
    let mut obs = env.reset(seed_base.wrapping_add(episode));
    let mut total = 0.0;
    for _ in 0..steps {
        let action = select_action(policy, normalizer, &obs, deterministic, &mut rng)?;
        let step = env.step(&action)?;
        total -= step.reward;
        if step.done {
            episode += 1;
            obs = env.reset(seed_base.wrapping_add(episode));
        } else {
            obs = step.next_state;
        }
    }
    Ok(total / steps as f64)
}
