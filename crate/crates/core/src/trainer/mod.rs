//! The outer training loop for both optimizer back-ends: collect a large
//! batch, compute k-step advantages, then run n epochs of updates against
//! the clipped surrogate. The natural-gradient path performs one full-batch
//! update per epoch with the KL-driven learning-rate controller; the
//! first-order path sweeps shuffled minibatches with the adaptive-moment
//! optimizer and a linearly decaying learning rate.

mod config;
mod eval;
mod loss;
mod metrics;

pub use config::{
    config_from_pairs, fnv1a, parse_config, parse_config_pairs, OptimizerKind, TrainerConfig,
};
pub use eval::{evaluate_average_stage_cost, evaluate_mean_episode_reward};
pub use loss::{
    clipped_surrogate, clipped_surrogate_dlogp, policy_ratio, value_loss, vanilla_surrogate_dlogp,
};
pub use metrics::{
    read_metrics_csv, read_timing_csv, write_metrics_csv, write_timing_csv, IterationMetrics,
    TimingRow, METRICS_HEADER, TIMING_HEADER,
};

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::make_env;
use crate::error::TrainError;
use crate::nn::{
    backward, forward_policy, forward_value, GaussianPolicy, MlpParams,
};
use crate::obs_norm::ObsNormalizer;
use crate::optim::{
    adapt_learning_rate, estimate_critic_factors, estimate_policy_factors,
    gauss_newton_critic_step, kfac_step, log_std_natural_step, FirstOrderKind,
    FirstOrderOptimizer, KroneckerFactors, LrState,
};
use crate::rollout::{compute_advantages, mix_seed, normalize_advantages, Collector, RolloutBatch};

/// Optimizer updates performed in one iteration: the natural-gradient path
/// does one full-batch update per epoch, the first-order path one update
/// per minibatch per epoch (final partial minibatch included).
pub fn updates_per_iteration(cfg: &TrainerConfig) -> u64 {
    match cfg.optimizer {
        OptimizerKind::Kfac => cfg.epochs_n as u64,
        OptimizerKind::FirstOrder => {
            let minibatches = cfg.batch_size.div_ceil(cfg.minibatch_size) as u64;
            cfg.epochs_n as u64 * minibatches
        }
    }
}

/// Iterations needed to reach `total_timesteps` with `batch_size` new
/// transitions per iteration.
pub fn planned_iterations(cfg: &TrainerConfig) -> u64 {
    (cfg.total_timesteps).div_ceil(cfg.batch_size as u64)
}

/// Everything observable about one completed iteration beyond the metrics
/// row itself.
#[derive(Debug, Clone)]
pub struct IterationDetail {
    pub metrics: IterationMetrics,
    /// Clip fraction of every optimizer update, in order.
    pub update_clip_fractions: Vec<f64>,
    /// KL against the iteration-start policy, as measured by the controller
    /// (per update on the natural-gradient path, end of iteration on the
    /// first-order path).
    pub update_kls: Vec<f64>,
    pub sim_seconds: f64,
}

struct EpochStats {
    surrogate_losses: Vec<f64>,
    value_losses: Vec<f64>,
    clip_fractions: Vec<f64>,
    kls: Vec<f64>,
}

pub struct Trainer {
    cfg: TrainerConfig,
    policy: GaussianPolicy,
    critic: MlpParams,
    collector: Collector,
    normalizer: ObsNormalizer,
    policy_factors: KroneckerFactors,
    critic_factors: KroneckerFactors,
    lr_state: LrState,
    fo_policy: Option<FirstOrderOptimizer>,
    fo_critic: Option<FirstOrderOptimizer>,
    factor_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    iteration: u64,
    timesteps: u64,
    updates_total: u64,
    metrics: Vec<IterationMetrics>,
    timing: Vec<TimingRow>,
}

impl Trainer {
    pub fn new(cfg: TrainerConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let env = make_env(&cfg.env_id)?;
        let obs_dim = env.spec().obs_dim;
        let act_dim = env.spec().action_dim;

        let policy = GaussianPolicy::new(obs_dim, &cfg.hidden_sizes, act_dim, mix_seed(cfg.seed, 1));
        let mut critic_sizes = vec![obs_dim];
        critic_sizes.extend_from_slice(&cfg.hidden_sizes);
        critic_sizes.push(1);
        let critic = MlpParams::new(&critic_sizes, mix_seed(cfg.seed, 2));

        let collector = Collector::new(env, mix_seed(cfg.seed, 3), mix_seed(cfg.seed, 4));
        let normalizer = ObsNormalizer::new(obs_dim, cfg.obs_normalization);
        let policy_factors = KroneckerFactors::zeros_for(&policy.net);
        let critic_factors = KroneckerFactors::zeros_for(&critic);
        let lr_state = LrState::new(cfg.eta0, cfg.delta, cfg.eta_min, cfg.eta_max);
        let (fo_policy, fo_critic) = match cfg.optimizer {
            OptimizerKind::Kfac => (None, None),
            OptimizerKind::FirstOrder => (
                Some(FirstOrderOptimizer::new(
                    &policy.net,
                    FirstOrderKind::adaptive_default(),
                    Some(act_dim),
                )),
                Some(FirstOrderOptimizer::new(
                    &critic,
                    FirstOrderKind::adaptive_default(),
                    None,
                )),
            ),
        };
        Ok(Self {
            factor_rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 5)),
            shuffle_rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 6)),
            cfg,
            policy,
            critic,
            collector,
            normalizer,
            policy_factors,
            critic_factors,
            lr_state,
            fo_policy,
            fo_critic,
            iteration: 0,
            timesteps: 0,
            updates_total: 0,
            metrics: Vec::new(),
            timing: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn critic(&self) -> &MlpParams {
        &self.critic
    }

    pub fn normalizer(&self) -> &ObsNormalizer {
        &self.normalizer
    }

    pub fn lr_state(&self) -> &LrState {
        &self.lr_state
    }

    pub fn policy_factors(&self) -> &KroneckerFactors {
        &self.policy_factors
    }

    pub fn critic_factors(&self) -> &KroneckerFactors {
        &self.critic_factors
    }

    pub fn metrics(&self) -> &[IterationMetrics] {
        &self.metrics
    }

    pub fn timing(&self) -> &[TimingRow] {
        &self.timing
    }

    pub fn timesteps(&self) -> u64 {
        self.timesteps
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn updates_total(&self) -> u64 {
        self.updates_total
    }

    pub fn is_done(&self) -> bool {
        self.timesteps >= self.cfg.total_timesteps
    }

    /// First-order learning rate for update number `update_idx` (0-based
    /// across the whole run): linear decay toward zero over the planned
    /// update budget, or constant when decay is disabled.
    fn first_order_lr_at(&self, update_idx: u64) -> f64 {
        if !self.cfg.first_order_lr_decay {
            return self.cfg.first_order_lr;
        }
        let total = planned_iterations(&self.cfg) * updates_per_iteration(&self.cfg);
        let frac = update_idx as f64 / total.max(1) as f64;
        self.cfg.first_order_lr * (1.0 - frac).max(0.0)
    }

    /// Per-sample clipped-objective quantities for one set of states and
    /// actions: (objective mean, dObj/dlogp per sample, clip fraction).
    fn surrogate_terms(
        heads: &crate::nn::GaussianHeads,
        actions: &Array2<f64>,
        old_log_probs: &[f64],
        advantages: &[f64],
        epsilon: f64,
    ) -> (f64, Vec<f64>, f64) {
        let logp_new = heads.log_probs(actions);
        let n = old_log_probs.len();
        let mut dlogp = vec![0.0; n];
        let mut obj = 0.0;
        let mut clipped = 0usize;
        for b in 0..n {
            let ratio = policy_ratio(logp_new[b], old_log_probs[b]);
            obj += clipped_surrogate(ratio, advantages[b], epsilon);
            dlogp[b] = clipped_surrogate_dlogp(ratio, advantages[b], epsilon);
            if ratio < 1.0 - epsilon || ratio > 1.0 + epsilon {
                clipped += 1;
            }
        }
        (obj / n as f64, dlogp, clipped as f64 / n as f64)
    }

    /// Applies one policy gradient assembly: head gradients for the mean
    /// outputs and the gradient for log_std, for loss
    /// L = -mean(obj) - entropy_coef * H(pi).
    fn policy_gradients(
        heads: &crate::nn::GaussianHeads,
        actions: &Array2<f64>,
        dlogp: &[f64],
        entropy_coef: f64,
    ) -> (Array2<f64>, Array1<f64>) {
        let n = actions.nrows();
        let dmean = heads.dlogp_dmean(actions);
        let mut head_grads = Array2::zeros(dmean.raw_dim());
        for b in 0..n {
            for d in 0..dmean.ncols() {
                head_grads[[b, d]] = -dlogp[b] * dmean[[b, d]];
            }
        }
        let dls = heads.dlogp_dlogstd(actions);
        let mut logstd_grad = Array1::zeros(dls.ncols());
        for d in 0..dls.ncols() {
            let mut acc = 0.0;
            for b in 0..n {
                acc += -dlogp[b] * dls[[b, d]];
            }
            // dH/dlog_std = 1 per dimension.
            logstd_grad[d] = acc / n as f64 - entropy_coef;
        }
        (head_grads, logstd_grad)
    }

    fn kfac_iteration(
        &mut self,
        batch: &RolloutBatch,
        old_heads: &crate::nn::GaussianHeads,
    ) -> Result<EpochStats, TrainError> {
        let eps = self.cfg.clip_epsilon;
        let mut clip_fractions = Vec::new();
        let mut kls = Vec::new();
        let mut surrogate_losses = Vec::new();
        let mut value_losses = Vec::new();

        for _epoch in 0..self.cfg.epochs_n {
            // Policy gradient under the current parameters.
            let (heads, trace) = forward_policy(&self.policy, &batch.states)?;
            let (obj_mean, dlogp, clip_frac) = Self::surrogate_terms(
                &heads,
                &batch.actions,
                &batch.old_log_probs,
                &batch.advantages,
                eps,
            );
            surrogate_losses.push(-obj_mean);
            clip_fractions.push(clip_frac);
            let (head_grads, logstd_grad) =
                Self::policy_gradients(&heads, &batch.actions, &dlogp, self.cfg.entropy_coef);
            let back = backward(&self.policy.net, &trace, &head_grads)?;

            // Curvature statistics at the current point, then the step.
            estimate_policy_factors(
                &self.policy,
                &batch.states,
                &mut self.policy_factors,
                self.cfg.ema_decay,
                &mut self.factor_rng,
            )?;
            kfac_step(
                &mut self.policy.net,
                &back.layer_grads,
                &self.policy_factors,
                self.cfg.damping,
                &self.lr_state,
            )?;
            log_std_natural_step(
                &mut self.policy.log_std,
                &logstd_grad,
                self.cfg.damping,
                &self.lr_state,
            )?;

            // Critic under the Gauss-Newton metric, same learning rate.
            let (values, ctrace) = forward_value(&self.critic, &batch.states)?;
            let vals: Vec<f64> = values.to_vec();
            value_losses.push(value_loss(&vals, &batch.returns));
            let mut vhead = Array2::zeros((batch.len(), 1));
            for b in 0..batch.len() {
                vhead[[b, 0]] = vals[b] - batch.returns[b];
            }
            let cback = backward(&self.critic, &ctrace, &vhead)?;
            estimate_critic_factors(
                &self.critic,
                &batch.states,
                &mut self.critic_factors,
                self.cfg.ema_decay,
                &mut self.factor_rng,
            )?;
            gauss_newton_critic_step(
                &mut self.critic,
                &cback.layer_grads,
                &self.critic_factors,
                self.cfg.damping,
                &self.lr_state,
            )?;

            // Observed KL against the iteration-start policy feeds the
            // controller before the next update.
            let (new_heads, _) = forward_policy(&self.policy, &batch.states)?;
            let kl = old_heads.mean_kl(&new_heads);
            adapt_learning_rate(&mut self.lr_state, kl);
            kls.push(kl);
            self.updates_total += 1;

            if self.cfg.kl_early_stop && kl > 4.0 * self.cfg.delta {
                break;
            }
        }
        Ok(EpochStats {
            surrogate_losses,
            value_losses,
            clip_fractions,
            kls,
        })
    }

    fn first_order_iteration(
        &mut self,
        batch: &RolloutBatch,
        old_heads: &crate::nn::GaussianHeads,
    ) -> Result<EpochStats, TrainError> {
        let eps = self.cfg.clip_epsilon;
        let n = batch.len();
        let mut clip_fractions = Vec::new();
        let mut surrogate_losses = Vec::new();
        let mut value_losses = Vec::new();

        'epochs: for _epoch in 0..self.cfg.epochs_n {
            let mut indices: Vec<usize> = (0..n).collect();
            indices.shuffle(&mut self.shuffle_rng);
            for chunk in indices.chunks(self.cfg.minibatch_size) {
                let lr = self.first_order_lr_at(self.updates_total);
                let mb_states = batch.states.select(Axis(0), chunk);
                let mb_actions = batch.actions.select(Axis(0), chunk);
                let mb_old: Vec<f64> = chunk.iter().map(|&i| batch.old_log_probs[i]).collect();
                let mb_adv: Vec<f64> = chunk.iter().map(|&i| batch.advantages[i]).collect();
                let mb_ret: Vec<f64> = chunk.iter().map(|&i| batch.returns[i]).collect();

                let (heads, trace) = forward_policy(&self.policy, &mb_states)?;
                let (obj_mean, dlogp, clip_frac) =
                    Self::surrogate_terms(&heads, &mb_actions, &mb_old, &mb_adv, eps);
                surrogate_losses.push(-obj_mean);
                clip_fractions.push(clip_frac);
                let (head_grads, logstd_grad) =
                    Self::policy_gradients(&heads, &mb_actions, &dlogp, self.cfg.entropy_coef);
                let back = backward(&self.policy.net, &trace, &head_grads)?;
                self.fo_policy
                    .as_mut()
                    .expect("first-order state")
                    .step(
                        &mut self.policy.net,
                        &back.layer_grads,
                        Some((&mut self.policy.log_std, &logstd_grad)),
                        lr,
                    )?;

                let (values, ctrace) = forward_value(&self.critic, &mb_states)?;
                let vals: Vec<f64> = values.to_vec();
                value_losses.push(value_loss(&vals, &mb_ret));
                let mut vhead = Array2::zeros((chunk.len(), 1));
                for b in 0..chunk.len() {
                    vhead[[b, 0]] = vals[b] - mb_ret[b];
                }
                let cback = backward(&self.critic, &ctrace, &vhead)?;
                self.fo_critic
                    .as_mut()
                    .expect("first-order state")
                    .step(&mut self.critic, &cback.layer_grads, None, lr)?;

                self.updates_total += 1;
            }
            if self.cfg.kl_early_stop {
                let (new_heads, _) = forward_policy(&self.policy, &batch.states)?;
                if old_heads.mean_kl(&new_heads) > 4.0 * self.cfg.delta {
                    break 'epochs;
                }
            }
        }

        let (new_heads, _) = forward_policy(&self.policy, &batch.states)?;
        let kl = old_heads.mean_kl(&new_heads);
        Ok(EpochStats {
            surrogate_losses,
            value_losses,
            clip_fractions,
            kls: vec![kl],
        })
    }

    pub fn train_iteration(&mut self) -> Result<IterationDetail, TrainError> {
        let iter_idx = self.iteration;
        self.train_iteration_inner()
            .map_err(|e| e.at_iteration(iter_idx))
    }

    fn train_iteration_inner(&mut self) -> Result<IterationDetail, TrainError> {
        let sim_start = Instant::now();
        let mut batch = self.collector.collect(
            &self.policy,
            &self.critic,
            &mut self.normalizer,
            self.cfg.batch_size,
        )?;
        let sim_seconds = sim_start.elapsed().as_secs_f64();

        compute_advantages(&mut batch, self.cfg.gamma, self.cfg.k_steps);
        if self.cfg.advantage_normalization {
            normalize_advantages(&mut batch);
        }

        let updates_before = self.updates_total;
        let optim_start = Instant::now();
        // Snapshot heads of the iteration-start policy: the reference for
        // every KL this iteration. Collection ran under these parameters,
        // so old_log_probs are consistent with them.
        let (old_heads, _) = forward_policy(&self.policy, &batch.states)?;
        let stats = match self.cfg.optimizer {
            OptimizerKind::Kfac => self.kfac_iteration(&batch, &old_heads)?,
            OptimizerKind::FirstOrder => self.first_order_iteration(&batch, &old_heads)?,
        };
        let optim_seconds = optim_start.elapsed().as_secs_f64();

        self.timesteps += self.cfg.batch_size as u64;
        let mean = |v: &[f64]| {
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let eta_now = match self.cfg.optimizer {
            OptimizerKind::Kfac => self.lr_state.eta,
            OptimizerKind::FirstOrder => self.first_order_lr_at(self.updates_total),
        };
        let metrics = IterationMetrics {
            iteration: self.iteration,
            timesteps: self.timesteps,
            mean_episode_reward: self.collector.mean_recent_episode_reward(),
            surrogate_loss: mean(&stats.surrogate_losses),
            value_loss: mean(&stats.value_losses),
            observed_kl: *stats.kls.last().expect("at least one KL measurement"),
            eta: eta_now,
            clip_fraction: mean(&stats.clip_fractions),
            optim_seconds,
            update_count: self.updates_total - updates_before,
        };
        self.timing.push(TimingRow {
            iteration: self.iteration,
            optim_seconds,
            sim_seconds,
            updates: self.updates_total - updates_before,
        });
        self.metrics.push(metrics.clone());
        self.iteration += 1;

        Ok(IterationDetail {
            metrics,
            update_clip_fractions: stats.clip_fractions,
            update_kls: stats.kls,
            sim_seconds,
        })
    }
}

/// Result of a complete training run.
pub struct TrainOutcome {
    pub config: TrainerConfig,
    pub metrics: Vec<IterationMetrics>,
    pub timing: Vec<TimingRow>,
    pub policy: GaussianPolicy,
    pub critic: MlpParams,
    pub normalizer: ObsNormalizer,
    pub lr_state: LrState,
    pub policy_factors: KroneckerFactors,
    pub critic_factors: KroneckerFactors,
}

/// Runs the full loop until `total_timesteps`, invoking `on_iteration`
/// after every iteration (checkpoint hooks live there).
pub fn train_with_callback(
    cfg: &TrainerConfig,
    mut on_iteration: impl FnMut(&Trainer, &IterationDetail) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(cfg.clone())?;
    while !trainer.is_done() {
        let detail = trainer.train_iteration()?;
        on_iteration(&trainer, &detail)?;
    }
    let Trainer {
        cfg,
        policy,
        critic,
        normalizer,
        policy_factors,
        critic_factors,
        lr_state,
        metrics,
        timing,
        ..
    } = trainer;
    Ok(TrainOutcome {
        config: cfg,
        metrics,
        timing,
        policy,
        critic,
        normalizer,
        lr_state,
        policy_factors,
        critic_factors,
    })
}

/// Runs the full loop until `total_timesteps`.
pub fn train(cfg: &TrainerConfig) -> Result<TrainOutcome, TrainError> {
    train_with_callback(cfg, |_, _| Ok(()))
}
