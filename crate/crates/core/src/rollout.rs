//! Experience collection and k-step advantage/return computation.

use std::collections::VecDeque;
use std::io::Write;

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::envs::Environment;
use crate::error::TrainError;
use crate::nn::{forward_policy, forward_value, GaussianPolicy, MlpParams};
use crate::obs_norm::ObsNormalizer;

/// Why an advantage window stops at an episode boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    /// The episode genuinely ended; the tail value is zero.
    Terminal,
    /// The episode was cut (step limit or batch edge); the tail bootstraps
    /// with the recorded value of the next state.
    Truncated,
}

/// Marks the last transition index of an episode segment within the batch.
#[derive(Debug, Clone)]
pub struct EpisodeBound {
    pub last_index: usize,
    pub kind: BoundKind,
    /// V(s_next) of the boundary transition; only used when `kind` is
    /// `Truncated`.
    pub bootstrap_value: f64,
}

/// A fixed-size batch of transitions plus everything the update step needs.
/// All parallel arrays have the same length; `bounds` always ends with an
/// entry whose `last_index` is the final transition.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub old_log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub bounds: Vec<EpisodeBound>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Batch debug dump: trajectory columns plus advantage/return.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let obs_dim = self.states.ncols();
        let act_dim = self.actions.ncols();
        let mut header = String::from("step");
        for i in 0..obs_dim {
            header.push_str(&format!(",s{i}"));
        }
        for i in 0..act_dim {
            header.push_str(&format!(",a{i}"));
        }
        header.push_str(",reward,done,advantage,return");
        writeln!(out, "{header}")?;
        for t in 0..self.len() {
            let mut line = format!("{t}");
            for v in self.states.row(t) {
                line.push_str(&format!(",{v}"));
            }
            for v in self.actions.row(t) {
                line.push_str(&format!(",{v}"));
            }
            line.push_str(&format!(
                ",{},{},{},{}",
                self.rewards[t],
                if self.dones[t] { 1 } else { 0 },
                self.advantages[t],
                self.returns[t]
            ));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Collects experience from one environment, carrying in-progress episodes
/// across batch boundaries. Owns the action-sampling rng and the stream of
/// per-episode environment seeds, so a fixed construction seed pins the
/// entire trajectory.
pub struct Collector {
    env: Box<dyn Environment>,
    action_rng: ChaCha8Rng,
    env_seed_base: u64,
    episode_index: u64,
    current_obs: Array1<f64>,
    episode_return: f64,
    recent_returns: VecDeque<f64>,
    total_steps: u64,
    episodes_completed: u64,
}

/// splitmix64 over base ^ golden-ratio-scaled tag; used to derive the
/// independent seed streams of a run from one master seed.
pub(crate) fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Collector {
    pub fn new(mut env: Box<dyn Environment>, action_seed: u64, env_seed_base: u64) -> Self {
        let current_obs = env.reset(mix_seed(env_seed_base, 0));
        Self {
            env,
            action_rng: <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(action_seed),
            env_seed_base,
            episode_index: 0,
            current_obs,
            episode_return: 0.0,
            recent_returns: VecDeque::with_capacity(100),
            total_steps: 0,
            episodes_completed: 0,
        }
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn episodes_completed(&self) -> u64 {
        self.episodes_completed
    }

    /// Mean return of the last (up to) 100 completed episodes; NaN before
    /// any episode has completed.
    pub fn mean_recent_episode_reward(&self) -> f64 {
        if self.recent_returns.is_empty() {
            f64::NAN
        } else {
            self.recent_returns.iter().sum::<f64>() / self.recent_returns.len() as f64
        }
    }

    /// Collects exactly `batch_size` transitions under the current policy.
    /// Per-step log-probs and values are recorded at collection time (they
    /// become the "old" quantities of the update), and the observation
    /// normalizer advances with every raw observation seen.
    pub fn collect(
        &mut self,
        policy: &GaussianPolicy,
        critic: &MlpParams,
        normalizer: &mut ObsNormalizer,
        batch_size: usize,
    ) -> Result<RolloutBatch, TrainError> {
        assert!(batch_size >= 1);
        let obs_dim = self.env.spec().obs_dim;
        let act_dim = self.env.spec().action_dim;

        let mut states = Array2::zeros((batch_size, obs_dim));
        let mut actions = Array2::zeros((batch_size, act_dim));
        let mut rewards = vec![0.0; batch_size];
        let mut dones = vec![false; batch_size];
        let mut old_log_probs = vec![0.0; batch_size];
        let mut values = vec![0.0; batch_size];
        let mut bounds = Vec::new();

        let value_of = |critic: &MlpParams, obs: &Array1<f64>| -> Result<f64, TrainError> {
            let row = obs.clone().insert_axis(ndarray::Axis(0));
            let (v, _) = forward_value(critic, &row)?;
            Ok(v[0])
        };

        for t in 0..batch_size {
            let norm_obs = normalizer.update_and_normalize(&self.current_obs);
            let row = norm_obs.clone().insert_axis(ndarray::Axis(0));
            let (heads, _) = forward_policy(policy, &row)?;
            let action_batch = heads.sample(&mut self.action_rng);
            let log_prob = heads.log_probs(&action_batch)[0];
            debug_assert!(log_prob.is_finite());
            let value = value_of(critic, &norm_obs)?;
            let action = action_batch.row(0).to_owned();

            let step = self.env.step(&action)?;

            states.row_mut(t).assign(&norm_obs);
            actions.row_mut(t).assign(&action);
            rewards[t] = step.reward;
            dones[t] = step.done;
            old_log_probs[t] = log_prob;
            values[t] = value;

            self.episode_return += step.reward;
            self.total_steps += 1;

            if step.done {
                // All built-in episodes end by truncation (step limit), so
                // the tail bootstraps with the value of the state the
                // episode would have continued from.
                let bootstrap = value_of(critic, &normalizer.normalize(&step.next_state))?;
                bounds.push(EpisodeBound {
                    last_index: t,
                    kind: BoundKind::Truncated,
                    bootstrap_value: bootstrap,
                });
                if self.recent_returns.len() == 100 {
                    self.recent_returns.pop_front();
                }
                self.recent_returns.push_back(self.episode_return);
                self.episode_return = 0.0;
                self.episodes_completed += 1;
                self.episode_index += 1;
                self.current_obs = self.env.reset(mix_seed(self.env_seed_base, self.episode_index));
            } else {
                self.current_obs = step.next_state;
            }
        }

        if bounds.last().map(|b| b.last_index) != Some(batch_size - 1) {
            // The batch cut an episode mid-flight: bootstrap its tail.
            let bootstrap = value_of(critic, &normalizer.normalize(&self.current_obs))?;
            bounds.push(EpisodeBound {
                last_index: batch_size - 1,
                kind: BoundKind::Truncated,
                bootstrap_value: bootstrap,
            });
        }

        Ok(RolloutBatch {
            states,
            actions,
            rewards,
            dones,
            old_log_probs,
            values,
            advantages: vec![0.0; batch_size],
            returns: vec![0.0; batch_size],
            bounds,
        })
    }
}

/// Fills `advantages` and `returns` with k-step bootstrapped estimates:
/// A_t = sum_{i=0}^{m-1} gamma^i r_{t+i} + gamma^m tail - V(s_t), where the
/// window length m = min(k, steps until the episode boundary) and the tail
/// is V(s_{t+m}) inside the episode, the recorded bootstrap value at a
/// truncation, or zero at a true terminal. Returns are A_t + V(s_t).
pub fn compute_advantages(batch: &mut RolloutBatch, gamma: f64, k: usize) {
    let n = batch.len();
    assert!(k >= 1, "k must be at least 1");
    assert!(!batch.bounds.is_empty(), "batch must carry episode bounds");
    debug_assert_eq!(batch.bounds.last().unwrap().last_index, n - 1);

    let mut bound_idx = 0usize;
    for t in 0..n {
        while batch.bounds[bound_idx].last_index < t {
            bound_idx += 1;
        }
        let bound = &batch.bounds[bound_idx];
        let window_end = (t + k - 1).min(bound.last_index);
        let mut acc = 0.0;
        let mut gpow = 1.0;
        for i in t..=window_end {
            acc += gpow * batch.rewards[i];
            gpow *= gamma;
        }
        let tail = if window_end == bound.last_index {
            match bound.kind {
                BoundKind::Terminal => 0.0,
                BoundKind::Truncated => bound.bootstrap_value,
            }
        } else {
            batch.values[window_end + 1]
        };
        let adv = acc + gpow * tail - batch.values[t];
        batch.advantages[t] = adv;
        batch.returns[t] = adv + batch.values[t];
    }
}

/// Shifts and scales advantages to mean 0 / std 1 (population std). Batches
/// with no variance are only centered. Returns the (mean, std) that were
/// removed, for diagnostics.
pub fn normalize_advantages(batch: &mut RolloutBatch) -> (f64, f64) {
    let n = batch.len() as f64;
    let mean = batch.advantages.iter().sum::<f64>() / n;
    let var = batch
        .advantages
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std > 1e-12 {
        for a in batch.advantages.iter_mut() {
            *a = (*a - mean) / std;
        }
    } else {
        for a in batch.advantages.iter_mut() {
            *a -= mean;
        }
    }
    (mean, std)
}
