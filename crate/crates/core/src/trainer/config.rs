//! Trainer configuration: defaults, validation, and the flat `key = value`
//! text format used by config files, run snapshots, and hashing.

use std::collections::BTreeMap;

use crate::envs::ENV_IDS;
use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Kfac,
    FirstOrder,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Kfac => "kfac",
            OptimizerKind::FirstOrder => "first_order",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub env_id: String,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub total_timesteps: u64,
    pub batch_size: usize,
    /// Number of optimization epochs per iteration. On the K-FAC path each
    /// epoch is one full-batch update; on the first-order path each epoch
    /// sweeps the batch in minibatches.
    pub epochs_n: usize,
    pub minibatch_size: usize,
    pub gamma: f64,
    pub clip_epsilon: f64,
    pub eta0: f64,
    pub delta: f64,
    pub damping: f64,
    pub ema_decay: f64,
    pub k_steps: usize,
    pub advantage_normalization: bool,
    pub obs_normalization: bool,
    pub entropy_coef: f64,
    pub first_order_lr: f64,
    pub first_order_lr_decay: bool,
    pub eta_min: f64,
    pub eta_max: f64,
    pub kl_early_stop: bool,
    pub hidden_sizes: Vec<usize>,
    pub checkpoint_interval: u64,
}

impl TrainerConfig {
    /// Defaults for the natural-gradient path: eta0 = 0.03, delta = 0.002,
    /// batch 2048, 2 epochs, (64, 64) networks.
    pub fn defaults(env_id: &str) -> Self {
        Self {
            env_id: env_id.to_string(),
            optimizer: OptimizerKind::Kfac,
            seed: 0,
            total_timesteps: 100_000,
            batch_size: 2048,
            epochs_n: 2,
            minibatch_size: 64,
            gamma: 0.99,
            clip_epsilon: 0.2,
            eta0: 0.03,
            delta: 0.002,
            damping: 0.01,
            ema_decay: 0.95,
            k_steps: 32,
            advantage_normalization: true,
            obs_normalization: true,
            entropy_coef: 0.0,
            first_order_lr: 3e-4,
            first_order_lr_decay: true,
            eta_min: 1e-5,
            eta_max: 1.0,
            kl_early_stop: false,
            hidden_sizes: vec![64, 64],
            checkpoint_interval: 50,
        }
    }

    /// Defaults for the first-order baseline: minibatch 64, 10 epochs.
    pub fn defaults_first_order(env_id: &str) -> Self {
        Self {
            optimizer: OptimizerKind::FirstOrder,
            epochs_n: 10,
            ..Self::defaults(env_id)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !ENV_IDS.contains(&self.env_id.as_str()) {
            return Err(ConfigError::new(
                "env_id",
                format!("unknown environment {:?}; known: {:?}", self.env_id, ENV_IDS),
            ));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 || self.gamma >= 1.0 {
            return Err(ConfigError::new("gamma", "must be in (0, 1)"));
        }
        if !self.clip_epsilon.is_finite() || self.clip_epsilon <= 0.0 || self.clip_epsilon >= 1.0 {
            return Err(ConfigError::new("clip_epsilon", "must be in (0, 1)"));
        }
        if self.batch_size < 1 {
            return Err(ConfigError::new("batch_size", "must be >= 1"));
        }
        if self.epochs_n < 1 {
            return Err(ConfigError::new("epochs_n", "must be >= 1"));
        }
        if self.minibatch_size < 1 || self.minibatch_size > self.batch_size {
            return Err(ConfigError::new(
                "minibatch_size",
                "must be in [1, batch_size]",
            ));
        }
        if !self.eta0.is_finite() || self.eta0 <= 0.0 {
            return Err(ConfigError::new("eta0", "must be > 0"));
        }
        if !self.delta.is_finite() || self.delta <= 0.0 {
            return Err(ConfigError::new("delta", "must be > 0"));
        }
        if !self.damping.is_finite() || self.damping < 0.0 {
            return Err(ConfigError::new("damping", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(ConfigError::new("ema_decay", "must be in [0, 1)"));
        }
        if self.k_steps < 1 {
            return Err(ConfigError::new("k_steps", "must be >= 1"));
        }
        if !self.first_order_lr.is_finite() || self.first_order_lr <= 0.0 {
            return Err(ConfigError::new("first_order_lr", "must be > 0"));
        }
        if !self.eta_min.is_finite() || self.eta_min <= 0.0 || self.eta_min > self.eta_max {
            return Err(ConfigError::new(
                "eta_min",
                "must satisfy 0 < eta_min <= eta_max",
            ));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(ConfigError::new("hidden_sizes", "entries must be >= 1"));
        }
        if self.entropy_coef < 0.0 {
            return Err(ConfigError::new("entropy_coef", "must be >= 0"));
        }
        if self.checkpoint_interval < 1 {
            return Err(ConfigError::new("checkpoint_interval", "must be >= 1"));
        }
        Ok(())
    }

    /// Canonical flat text: fixed key order, one `key = value` per line.
    pub fn to_canonical_text(&self) -> String {
        let hidden = self
            .hidden_sizes
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "env_id = {}\n\
             optimizer = {}\n\
             seed = {}\n\
             total_timesteps = {}\n\
             batch_size = {}\n\
             epochs_n = {}\n\
             minibatch_size = {}\n\
             gamma = {}\n\
             clip_epsilon = {}\n\
             eta0 = {}\n\
             delta = {}\n\
             damping = {}\n\
             ema_decay = {}\n\
             k_steps = {}\n\
             advantage_normalization = {}\n\
             obs_normalization = {}\n\
             entropy_coef = {}\n\
             first_order_lr = {}\n\
             first_order_lr_decay = {}\n\
             eta_min = {}\n\
             eta_max = {}\n\
             kl_early_stop = {}\n\
             hidden_sizes = {}\n\
             checkpoint_interval = {}\n",
            self.env_id,
            self.optimizer.as_str(),
            self.seed,
            self.total_timesteps,
            self.batch_size,
            self.epochs_n,
            self.minibatch_size,
            self.gamma,
            self.clip_epsilon,
            self.eta0,
            self.delta,
            self.damping,
            self.ema_decay,
            self.k_steps,
            self.advantage_normalization,
            self.obs_normalization,
            self.entropy_coef,
            self.first_order_lr,
            self.first_order_lr_decay,
            self.eta_min,
            self.eta_max,
            self.kl_early_stop,
            hidden,
            self.checkpoint_interval,
        )
    }

    /// FNV-1a hash of the canonical text with the seed line removed; runs
    /// that differ only in seed share a group hash.
    pub fn group_hash(&self) -> u64 {
        let text: String = self
            .to_canonical_text()
            .lines()
            .filter(|l| !l.starts_with("seed ="))
            .collect::<Vec<_>>()
            .join("\n");
        fnv1a(text.as_bytes())
    }

    pub fn group_hash_hex(&self) -> String {
        format!("{:08x}", self.group_hash() as u32)
    }

    /// Short human-readable label for plots and reports.
    pub fn label(&self) -> String {
        format!(
            "{}-{}-e{}-{}",
            self.env_id,
            self.optimizer.as_str(),
            self.epochs_n,
            self.group_hash_hex()
        )
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Parses the flat config format: one `key = value` per line, `#` comments,
/// blank lines allowed. Later keys override earlier ones.
pub fn parse_config_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut pairs = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::new(
                format!("line {}", lineno + 1),
                format!("expected `key = value`, got {raw:?}"),
            ));
        };
        pairs.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(pairs)
}

fn parse_field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse::<T>()
        .map_err(|_| ConfigError::new(key, format!("cannot parse {value:?}")))
}

/// Builds a config from key/value pairs. `optimizer` selects the default
/// profile (K-FAC unless stated); unknown keys are rejected by name.
pub fn config_from_pairs(pairs: &BTreeMap<String, String>) -> Result<TrainerConfig, ConfigError> {
    let env_id = pairs
        .get("env_id")
        .ok_or_else(|| ConfigError::new("env_id", "missing required field"))?
        .clone();
    let optimizer = match pairs.get("optimizer").map(|s| s.as_str()) {
        None | Some("kfac") => OptimizerKind::Kfac,
        Some("first_order") => OptimizerKind::FirstOrder,
        Some(other) => {
            return Err(ConfigError::new(
                "optimizer",
                format!("expected kfac or first_order, got {other:?}"),
            ))
        }
    };
    let mut cfg = match optimizer {
        OptimizerKind::Kfac => TrainerConfig::defaults(&env_id),
        OptimizerKind::FirstOrder => TrainerConfig::defaults_first_order(&env_id),
    };
    for (key, value) in pairs {
        match key.as_str() {
            "env_id" | "optimizer" => {}
            "seed" => cfg.seed = parse_field(key, value)?,
            "total_timesteps" => cfg.total_timesteps = parse_field(key, value)?,
            "batch_size" => cfg.batch_size = parse_field(key, value)?,
            "epochs_n" => cfg.epochs_n = parse_field(key, value)?,
            "minibatch_size" => cfg.minibatch_size = parse_field(key, value)?,
            "gamma" => cfg.gamma = parse_field(key, value)?,
            "clip_epsilon" => cfg.clip_epsilon = parse_field(key, value)?,
            "eta0" => cfg.eta0 = parse_field(key, value)?,
            "delta" => cfg.delta = parse_field(key, value)?,
            "damping" => cfg.damping = parse_field(key, value)?,
            "ema_decay" => cfg.ema_decay = parse_field(key, value)?,
            "k_steps" => cfg.k_steps = parse_field(key, value)?,
            "advantage_normalization" => cfg.advantage_normalization = parse_field(key, value)?,
            "obs_normalization" => cfg.obs_normalization = parse_field(key, value)?,
            "entropy_coef" => cfg.entropy_coef = parse_field(key, value)?,
            "first_order_lr" => cfg.first_order_lr = parse_field(key, value)?,
            "first_order_lr_decay" => cfg.first_order_lr_decay = parse_field(key, value)?,
            "eta_min" => cfg.eta_min = parse_field(key, value)?,
            "eta_max" => cfg.eta_max = parse_field(key, value)?,
            "kl_early_stop" => cfg.kl_early_stop = parse_field(key, value)?,
            "checkpoint_interval" => cfg.checkpoint_interval = parse_field(key, value)?,
            "hidden_sizes" => {
                let sizes: Result<Vec<usize>, _> =
                    value.split(',').map(|s| s.trim().parse::<usize>()).collect();
                cfg.hidden_sizes =
                    sizes.map_err(|_| ConfigError::new(key, format!("cannot parse {value:?}")))?;
            }
            other => {
                return Err(ConfigError::new(
                    other,
                    "unknown config field",
                ))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a full config text and validates it.
pub fn parse_config(text: &str) -> Result<TrainerConfig, ConfigError> {
    config_from_pairs(&parse_config_pairs(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_two_profiles() {
        let kfac = TrainerConfig::defaults("pendulum");
        assert_eq!(kfac.eta0, 0.03);
        assert_eq!(kfac.delta, 0.002);
        assert_eq!(kfac.batch_size, 2048);
        assert_eq!(kfac.epochs_n, 2);
        assert_eq!(kfac.hidden_sizes, vec![64, 64]);
        let fo = TrainerConfig::defaults_first_order("pendulum");
        assert_eq!(fo.epochs_n, 10);
        assert_eq!(fo.minibatch_size, 64);
    }

    #[test]
    fn round_trips_through_canonical_text() {
        let mut cfg = TrainerConfig::defaults("lqr");
        cfg.seed = 17;
        cfg.gamma = 0.995;
        let parsed = parse_config(&cfg.to_canonical_text()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn validation_names_the_bad_field() {
        let mut cfg = TrainerConfig::defaults("pendulum");
        cfg.clip_epsilon = 1.5;
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.field, "clip_epsilon");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse_config("env_id = pendulum\nwibble = 3\n").unwrap_err();
        assert_eq!(err.field, "wibble");
    }

    #[test]
    fn missing_env_id_is_rejected() {
        let err = parse_config("gamma = 0.9\n").unwrap_err();
        assert_eq!(err.field, "env_id");
    }

    #[test]
    fn group_hash_ignores_seed() {
        let mut a = TrainerConfig::defaults("pendulum");
        let mut b = TrainerConfig::defaults("pendulum");
        a.seed = 1;
        b.seed = 2;
        assert_eq!(a.group_hash(), b.group_hash());
        b.gamma = 0.9;
        assert_ne!(a.group_hash(), b.group_hash());
    }

    #[test]
    fn comments_and_blanks_are_ignored ()  {
        let text = "# a comment\n\nenv_id = pendulum  # trailing\n  seed = 4\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.env_id, "pendulum");
        assert_eq!(cfg.seed, 4);
    }
}
