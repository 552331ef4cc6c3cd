//! Plain-text checkpoint formats.
//!
//! Network checkpoints carry a version header, the layer sizes, and the
//! seed of the run that produced them, followed by one tensor per block.
//! The optimizer-state checkpoint bundles the Kronecker factors, EMA
//! counters, learning-rate state, and the frozen observation normalizer so
//! runs can resume. Floats are written with shortest round-trip formatting,
//! so load(save(x)) == x bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::TrainError;
use crate::linalg::SymMatrix;
use crate::nn::{GaussianPolicy, Layer, MlpParams};
use crate::obs_norm::ObsNormalizer;
use crate::optim::{KlAdaptEvent, KroneckerFactors, LayerFactors, LrState};

pub const NET_FORMAT_VERSION: u32 = 1;
pub const OPTIM_FORMAT_VERSION: u32 = 1;

fn fmt_error(path: &Path, message: impl Into<String>) -> TrainError {
    TrainError::CheckpointFormat {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn write_matrix(out: &mut String, name: &str, m: &Array2<f64>) {
    let _ = writeln!(out, "{name} {} {}", m.nrows(), m.ncols());
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

fn write_vector(out: &mut String, name: &str, v: &Array1<f64>) {
    let line: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    let _ = writeln!(out, "{name} {}", v.len());
    let _ = writeln!(out, "{}", line.join(" "));
}

struct Reader<'a> {
    lines: std::str::Lines<'a>,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Result<&'a str, TrainError> {
        self.lines
            .next()
            .ok_or_else(|| fmt_error(self.path, "unexpected end of file"))
    }

    fn expect_tag(&mut self, tag: &str) -> Result<Vec<&'a str>, TrainError> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or("");
        if head != tag {
            return Err(fmt_error(self.path, format!("expected {tag:?}, got {head:?}")));
        }
        Ok(parts.collect())
    }

    fn matrix(&mut self, tag: &str) -> Result<Array2<f64>, TrainError> {
        let dims = self.expect_tag(tag)?;
        if dims.len() != 2 {
            return Err(fmt_error(self.path, format!("{tag}: bad dims")));
        }
        let rows: usize = dims[0]
            .parse()
            .map_err(|_| fmt_error(self.path, "bad row count"))?;
        let cols: usize = dims[1]
            .parse()
            .map_err(|_| fmt_error(self.path, "bad col count"))?;
        let mut m = Array2::zeros((rows, cols));
        for r in 0..rows {
            let line = self.next()?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != cols {
                return Err(fmt_error(self.path, format!("{tag}: row {r} has {} values", vals.len())));
            }
            for (c, v) in vals.iter().enumerate() {
                m[[r, c]] = v
                    .parse()
                    .map_err(|_| fmt_error(self.path, format!("bad float {v:?}")))?;
            }
        }
        Ok(m)
    }

    fn vector(&mut self, tag: &str) -> Result<Array1<f64>, TrainError> {
        let dims = self.expect_tag(tag)?;
        if dims.len() != 1 {
            return Err(fmt_error(self.path, format!("{tag}: bad dims")));
        }
        let len: usize = dims[0]
            .parse()
            .map_err(|_| fmt_error(self.path, "bad length"))?;
        let line = self.next()?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != len {
            return Err(fmt_error(self.path, format!("{tag}: expected {len} values")));
        }
        let mut v = Array1::zeros(len);
        for (i, s) in vals.iter().enumerate() {
            v[i] = s
                .parse()
                .map_err(|_| fmt_error(self.path, format!("bad float {s:?}")))?;
        }
        Ok(v)
    }
}

fn net_to_text(kind: &str, params: &MlpParams, seed: u64, log_std: Option<&Array1<f64>>) -> String {
    let sizes: Vec<String> = params.layer_sizes().iter().map(|s| s.to_string()).collect();
    let mut out = String::new();
    let _ = writeln!(out, "ppokfac-net v{NET_FORMAT_VERSION}");
    let _ = writeln!(out, "kind {kind}");
    let _ = writeln!(out, "layer_sizes {}", sizes.join(","));
    let _ = writeln!(out, "seed {seed}");
    if let Some(ls) = log_std {
        write_vector(&mut out, "log_std", ls);
    }
    for (i, layer) in params.layers().iter().enumerate() {
        write_matrix(&mut out, &format!("weight{i}"), &layer.weight);
        write_vector(&mut out, &format!("bias{i}"), &layer.bias);
    }
    out
}

fn net_from_text(
    path: &Path,
    text: &str,
    expect_kind: &str,
) -> Result<(MlpParams, Option<Array1<f64>>, u64), TrainError> {
    let mut r = Reader {
        lines: text.lines(),
        path,
    };
    let header = r.next()?;
    if header != format!("ppokfac-net v{NET_FORMAT_VERSION}") {
        return Err(fmt_error(path, format!("unsupported header {header:?}")));
    }
    let kind = r.expect_tag("kind")?;
    if kind != vec![expect_kind] {
        return Err(fmt_error(path, format!("expected kind {expect_kind}, got {kind:?}")));
    }
    let sizes_raw = r.expect_tag("layer_sizes")?;
    let sizes: Vec<usize> = sizes_raw
        .first()
        .ok_or_else(|| fmt_error(path, "missing layer sizes"))?
        .split(',')
        .map(|s| s.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| fmt_error(path, "bad layer sizes"))?;
    let seed_raw = r.expect_tag("seed")?;
    let seed: u64 = seed_raw
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| fmt_error(path, "bad seed"))?;
    let log_std = if expect_kind == "policy" {
        Some(r.vector("log_std")?)
    } else {
        None
    };
    let mut layers = Vec::new();
    for i in 0..sizes.len() - 1 {
        let weight = r.matrix(&format!("weight{i}"))?;
        let bias = r.vector(&format!("bias{i}"))?;
        if weight.dim() != (sizes[i + 1], sizes[i]) || bias.len() != sizes[i + 1] {
            return Err(fmt_error(path, format!("layer {i} shape mismatch")));
        }
        layers.push(Layer { weight, bias });
    }
    Ok((MlpParams::from_layers(layers), log_std, seed))
}

pub fn save_policy(path: &Path, policy: &GaussianPolicy, seed: u64) -> Result<(), TrainError> {
    let text = net_to_text("policy", &policy.net, seed, Some(&policy.log_std));
    std::fs::write(path, text).map_err(|e| TrainError::io(path.display().to_string(), e))
}

pub fn load_policy(path: &Path) -> Result<(GaussianPolicy, u64), TrainError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| TrainError::io(path.display().to_string(), e))?;
    let (net, log_std, seed) = net_from_text(path, &text, "policy")?;
    let log_std = log_std.ok_or_else(|| fmt_error(path, "policy missing log_std"))?;
    if log_std.len() != net.out_dim() {
        return Err(fmt_error(path, "log_std dimension mismatch"));
    }
    Ok((GaussianPolicy { net, log_std }, seed))
}

pub fn save_value(path: &Path, critic: &MlpParams, seed: u64) -> Result<(), TrainError> {
    let text = net_to_text("value", critic, seed, None);
    std::fs::write(path, text).map_err(|e| TrainError::io(path.display().to_string(), e))
}

pub fn load_value(path: &Path) -> Result<(MlpParams, u64), TrainError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| TrainError::io(path.display().to_string(), e))?;
    let (net, _, seed) = net_from_text(path, &text, "value")?;
    Ok((net, seed))
}

fn factors_to_text(out: &mut String, name: &str, factors: &KroneckerFactors) {
    let _ = writeln!(
        out,
        "{name} layers={} update_count={} ema_weight={}",
        factors.layers.len(),
        factors.update_count,
        factors.ema_weight
    );
    for (i, lf) in factors.layers.iter().enumerate() {
        write_matrix(out, &format!("{name}_a{i}"), lf.a.as_array());
        write_matrix(out, &format!("{name}_g{i}"), lf.g.as_array());
    }
}

fn factors_from_text(r: &mut Reader, name: &str) -> Result<KroneckerFactors, TrainError> {
    let meta = r.expect_tag(name)?;
    let mut layers_n = 0usize;
    let mut update_count = 0u64;
    let mut ema_weight = 0.0f64;
    for kv in &meta {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(fmt_error(r.path, format!("bad factor meta {kv:?}")));
        };
        match k {
            "layers" => layers_n = v.parse().map_err(|_| fmt_error(r.path, "bad layers"))?,
            "update_count" => {
                update_count = v.parse().map_err(|_| fmt_error(r.path, "bad update_count"))?
            }
            "ema_weight" => {
                ema_weight = v.parse().map_err(|_| fmt_error(r.path, "bad ema_weight"))?
            }
            other => return Err(fmt_error(r.path, format!("unknown factor meta {other:?}"))),
        }
    }
    let mut layers = Vec::with_capacity(layers_n);
    for i in 0..layers_n {
        let a = r.matrix(&format!("{name}_a{i}"))?;
        let g = r.matrix(&format!("{name}_g{i}"))?;
        layers.push(LayerFactors {
            a: SymMatrix::new(a).map_err(|e| fmt_error(r.path, e.to_string()))?,
            g: SymMatrix::new(g).map_err(|e| fmt_error(r.path, e.to_string()))?,
        });
    }
    Ok(KroneckerFactors {
        layers,
        update_count,
        ema_weight,
    })
}

/// Optimizer-state checkpoint: factors for both networks, the learning-rate
/// controller (history included), and the frozen observation normalizer.
pub struct OptimCheckpoint {
    pub policy_factors: KroneckerFactors,
    pub critic_factors: KroneckerFactors,
    pub lr_state: LrState,
    pub normalizer: ObsNormalizer,
}

pub fn save_optim_state(
    path: &Path,
    policy_factors: &KroneckerFactors,
    critic_factors: &KroneckerFactors,
    lr_state: &LrState,
    normalizer: &ObsNormalizer,
) -> Result<(), TrainError> {
    let mut out = String::new();
    let _ = writeln!(out, "ppokfac-optim v{OPTIM_FORMAT_VERSION}");
    factors_to_text(&mut out, "policy_factors", policy_factors);
    factors_to_text(&mut out, "critic_factors", critic_factors);
    let _ = writeln!(
        out,
        "lr_state eta={} delta={} eta_min={} eta_max={} events={}",
        lr_state.eta,
        lr_state.delta,
        lr_state.eta_min,
        lr_state.eta_max,
        lr_state.history.len()
    );
    for e in &lr_state.history {
        let _ = writeln!(out, "{} {} {}", e.index, e.observed_kl, e.eta_after);
    }
    let _ = writeln!(
        out,
        "normalizer enabled={} count={}",
        normalizer.enabled, normalizer.count
    );
    write_vector(&mut out, "obs_mean", &normalizer.mean);
    write_vector(&mut out, "obs_var", &normalizer.var);
    std::fs::write(path, out).map_err(|e| TrainError::io(path.display().to_string(), e))
}

pub fn load_optim_state(path: &Path) -> Result<OptimCheckpoint, TrainError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| TrainError::io(path.display().to_string(), e))?;
    let mut r = Reader {
        lines: text.lines(),
        path,
    };
    let header = r.next()?;
    if header != format!("ppokfac-optim v{OPTIM_FORMAT_VERSION}") {
        return Err(fmt_error(path, format!("unsupported header {header:?}")));
    }
    let policy_factors = factors_from_text(&mut r, "policy_factors")?;
    let critic_factors = factors_from_text(&mut r, "critic_factors")?;

    let meta = r.expect_tag("lr_state")?;
    let mut eta = 0.0;
    let mut delta = 0.0;
    let mut eta_min = 0.0;
    let mut eta_max = 0.0;
    let mut events = 0usize;
    for kv in &meta {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(fmt_error(path, format!("bad lr meta {kv:?}")));
        };
        let parsed: f64 = v.parse().map_err(|_| fmt_error(path, "bad lr value"))?;
        match k {
            "eta" => eta = parsed,
            "delta" => delta = parsed,
            "eta_min" => eta_min = parsed,
            "eta_max" => eta_max = parsed,
            "events" => events = parsed as usize,
            other => return Err(fmt_error(path, format!("unknown lr meta {other:?}"))),
        }
    }
    let mut history = Vec::with_capacity(events);
    for _ in 0..events {
        let line = r.next()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(fmt_error(path, "bad lr event"));
        }
        history.push(KlAdaptEvent {
            index: parts[0].parse().map_err(|_| fmt_error(path, "bad event index"))?,
            observed_kl: parts[1].parse().map_err(|_| fmt_error(path, "bad event kl"))?,
            eta_after: parts[2].parse().map_err(|_| fmt_error(path, "bad event eta"))?,
        });
    }
    let mut lr_state = LrState::new(eta.max(f64::MIN_POSITIVE), delta, eta_min, eta_max);
    lr_state.eta = eta;
    lr_state.history = history;

    let meta = r.expect_tag("normalizer")?;
    let mut enabled = true;
    let mut count = 0.0f64;
    for kv in &meta {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(fmt_error(path, format!("bad normalizer meta {kv:?}")));
        };
        match k {
            "enabled" => enabled = v.parse().map_err(|_| fmt_error(path, "bad enabled"))?,
            "count" => count = v.parse().map_err(|_| fmt_error(path, "bad count"))?,
            other => return Err(fmt_error(path, format!("unknown normalizer meta {other:?}"))),
        }
    }
    let mean = r.vector("obs_mean")?;
    let var = r.vector("obs_var")?;
    let normalizer = ObsNormalizer::from_stats(mean, var, count, enabled);

    Ok(OptimCheckpoint {
        policy_factors,
        critic_factors,
        lr_state,
        normalizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::adapt_learning_rate;
    use ndarray::arr1;

    #[test]
    fn policy_checkpoint_round_trips_bit_exactly() {
        let dir = std::env::temp_dir().join("ppokfac-test-ckpt-policy");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("policy.txt");
        let mut policy = GaussianPolicy::new(3, &[8, 8], 2, 77);
        policy.log_std = arr1(&[0.1234567890123456, -1.5e-7]);
        save_policy(&path, &policy, 42).unwrap();
        let (loaded, seed) = load_policy(&path).unwrap();
        assert_eq!(seed, 42);
        assert_eq!(loaded.log_std, policy.log_std);
        for (a, b) in loaded.net.layers().iter().zip(policy.net.layers()) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.bias, b.bias);
        }
    }

    #[test]
    fn value_checkpoint_round_trips() {
        let dir = std::env::temp_dir().join("ppokfac-test-ckpt-value");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("value.txt");
        let critic = MlpParams::new(&[4, 16, 1], 9);
        save_value(&path, &critic, 7).unwrap();
        let (loaded, seed) = load_value(&path).unwrap();
        assert_eq!(seed, 7);
        assert_eq!(loaded.layer_sizes(), critic.layer_sizes());
        assert_eq!(loaded.layers()[0].weight, critic.layers()[0].weight);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = std::env::temp_dir().join("ppokfac-test-ckpt-kind");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("value.txt");
        let critic = MlpParams::new(&[4, 1], 9);
        save_value(&path, &critic, 7).unwrap();
        assert!(load_policy(&path).is_err());
    }

    #[test]
    fn optim_state_round_trips() {
        let dir = std::env::temp_dir().join("ppokfac-test-ckpt-optim");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("optim.txt");

        let policy = GaussianPolicy::new(3, &[4], 2, 1);
        let critic = MlpParams::new(&[3, 4, 1], 2);
        let mut pf = KroneckerFactors::zeros_for(&policy.net);
        let cf = KroneckerFactors::zeros_for(&critic);
        let states = ndarray::Array2::from_shape_fn((8, 3), |(i, j)| (i + j) as f64 * 0.1);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        crate::optim::estimate_policy_factors(&policy, &states, &mut pf, 0.9, &mut rng).unwrap();

        let mut lr = LrState::new(0.03, 0.002, 1e-5, 1.0);
        adapt_learning_rate(&mut lr, 0.01);
        adapt_learning_rate(&mut lr, 0.0001);

        let mut norm = ObsNormalizer::new(3, true);
        for i in 0..20 {
            norm.update(&arr1(&[i as f64, 0.5 * i as f64, -0.1 * i as f64]));
        }

        save_optim_state(&path, &pf, &cf, &lr, &norm).unwrap();
        let loaded = load_optim_state(&path).unwrap();
        assert_eq!(loaded.policy_factors.update_count, pf.update_count);
        assert_eq!(loaded.policy_factors.ema_weight, pf.ema_weight);
        assert_eq!(
            loaded.policy_factors.layers[0].a.as_array(),
            pf.layers[0].a.as_array()
        );
        assert_eq!(loaded.lr_state.eta, lr.eta);
        assert_eq!(loaded.lr_state.history, lr.history);
        assert_eq!(loaded.normalizer.mean, norm.mean);
        assert_eq!(loaded.normalizer.var, norm.var);
        assert_eq!(loaded.normalizer.count, norm.count);
    }
}
