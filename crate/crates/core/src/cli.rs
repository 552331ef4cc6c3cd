//! Command-line experiment harness.
//!
//! Subcommands:
//!   run <config> [--set k=v]... [--run-root DIR] [--parallel] [--verbose]
//!   compare <run_dir>... --output FILE.svg [--metric NAME] [--x AXIS]
//!   bench <config> [--set k=v]... [--output FILE]
//!   list-envs
//!
//! The run root comes from PPOKFAC_RUN_ROOT (or --run-root, or ./runs).
//! Exit codes: 0 success, 1 config error, 2 runtime failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::checkpoint::{save_optim_state, save_policy, save_value};
use crate::envs::{make_env, ENV_IDS};
use crate::error::{ConfigError, TrainError};
use crate::svgplot::{render_line_chart, Series};
use crate::trainer::{
    config_from_pairs, parse_config_pairs, read_metrics_csv, train,
    train_with_callback, write_metrics_csv, write_timing_csv, IterationMetrics, OptimizerKind,
    TrainerConfig,
};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(c) => CliError::Config(c),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("io error on {}: {e}", path.display()))
}

/// Entry point; returns the process exit code.
pub fn cli_main(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return Err(CliError::Config(ConfigError::new(
            "command",
            "missing subcommand",
        )));
    };
    match command.as_str() {
        "run" => command_run(&args[1..]),
        "compare" => command_compare(&args[1..]),
        "bench" => command_bench(&args[1..]),
        "list-envs" => {
            print!("{}", list_envs_text());
            Ok(())
        }
        "--help" | "-h" | "help" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Config(ConfigError::new(
            "command",
            format!("unknown subcommand {other:?}"),
        ))),
    }
}

const USAGE: &str = "usage:
  ppokfac run <config> [--set key=value]... [--run-root DIR] [--parallel] [--verbose]
  ppokfac compare <run_dir>... --output FILE.svg [--metric NAME] [--x timesteps|updates|iteration]
  ppokfac bench <config> [--set key=value]... [--output FILE]
  ppokfac list-envs

--set values may be comma-separated lists; the run sweeps the cartesian
product (one run directory per combination). bench runs the config on the
natural-gradient path and on the first-order path (each with its own
epoch/minibatch profile) and reports optimization wall-clock for both.";

pub fn list_envs_text() -> String {
    let mut out = String::from("id        obs_dim  action_dim  max_steps  action_bounds\n");
    for id in ENV_IDS {
        let env = make_env(id).expect("built-in env");
        let spec = env.spec();
        let bounds: Vec<String> = spec
            .action_bounds
            .iter()
            .map(|(lo, hi)| format!("[{lo}, {hi}]"))
            .collect();
        let _ = writeln!(
            out,
            "{:<9} {:<8} {:<11} {:<10} {}",
            spec.id,
            spec.obs_dim,
            spec.action_dim,
            spec.max_episode_steps,
            bounds.join(" ")
        );
    }
    out
}

fn run_root(cli_flag: Option<&str>) -> PathBuf {
    if let Some(flag) = cli_flag {
        return PathBuf::from(flag);
    }
    if let Ok(root) = std::env::var("PPOKFAC_RUN_ROOT") {
        if !root.is_empty() {
            return PathBuf::from(root);
        }
    }
    PathBuf::from("runs")
}

/// Expands comma-separated override values into the cartesian product of
/// single-valued override sets.
fn expand_sweeps(sets: &[(String, String)]) -> Vec<Vec<(String, String)>> {
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, value) in sets {
        let values: Vec<&str> = value.split(',').collect();
        let mut next = Vec::with_capacity(combos.len() * values.len());
        for combo in &combos {
            for v in &values {
                let mut c = combo.clone();
                c.push((key.clone(), v.trim().to_string()));
                next.push(c);
            }
        }
        combos = next;
    }
    combos
}

struct ParsedArgs {
    positional: Vec<String>,
    sets: Vec<(String, String)>,
    flags: BTreeMap<String, String>,
}

fn parse_set_flags(args: &[String]) -> Result<ParsedArgs, CliError> {
    let mut positional = Vec::new();
    let mut sets = Vec::new();
    let mut flags = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "--set" => {
                let v = args.get(i + 1).ok_or_else(|| {
                    CliError::Config(ConfigError::new("--set", "expects key=value"))
                })?;
                let (k, val) = v.split_once('=').ok_or_else(|| {
                    CliError::Config(ConfigError::new("--set", format!("expected key=value, got {v:?}")))
                })?;
                sets.push((k.trim().to_string(), val.trim().to_string()));
                i += 2;
            }
            "--run-root" | "--output" | "--metric" | "--x" => {
                let key = args[i].clone();
                let v = args.get(i + 1).ok_or_else(|| {
                    CliError::Config(ConfigError::new(key.clone(), "expects a value"))
                })?;
                flags.insert(key, v.clone());
                i += 2;
            }
            "--parallel" | "--verbose" => {
                flags.insert(args[i].clone(), "true".to_string());
                i += 1;
            }
            other if other.starts_with("--") => {
                return Err(CliError::Config(ConfigError::new(
                    other,
                    "unknown flag",
                )));
            }
            _ => {
                positional.push(args[i].clone());
                i += 1;
            }
        }
    }
    Ok(ParsedArgs {
        positional,
        sets,
        flags,
    })
}

fn load_config_with_overrides(
    config_path: &Path,
    overrides: &[(String, String)],
) -> Result<TrainerConfig, CliError> {
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        CliError::Config(ConfigError::new(
            "config",
            format!("cannot read {}: {e}", config_path.display()),
        ))
    })?;
    let mut pairs = parse_config_pairs(&text)?;
    for (k, v) in overrides {
        pairs.insert(k.clone(), v.clone());
    }
    Ok(config_from_pairs(&pairs)?)
}

fn timestamp_millis() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Creates a fresh run directory named by config hash + seed + timestamp;
/// never reuses an existing directory.
fn create_run_dir(root: &Path, cfg: &TrainerConfig) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let base = format!("{}-s{}-{}", cfg.group_hash_hex(), cfg.seed, timestamp_millis());
    let mut candidate = root.join(&base);
    let mut counter = 0;
    while candidate.exists() {
        counter += 1;
        candidate = root.join(format!("{base}-{counter}"));
    }
    std::fs::create_dir_all(&candidate).map_err(|e| io_err(&candidate, e))?;
    Ok(candidate)
}

#[allow(clippy::too_many_arguments)]
fn write_checkpoint_set(
    dir: &Path,
    trainer_policy: &crate::nn::GaussianPolicy,
    critic: &crate::nn::MlpParams,
    pf: &crate::optim::KroneckerFactors,
    cf: &crate::optim::KroneckerFactors,
    lr: &crate::optim::LrState,
    norm: &crate::obs_norm::ObsNormalizer,
    seed: u64,
) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir.display().to_string(), e))?;
    save_policy(&dir.join("policy.txt"), trainer_policy, seed)?;
    save_value(&dir.join("value.txt"), critic, seed)?;
    save_optim_state(&dir.join("optim.txt"), pf, cf, lr, norm)?;
    Ok(())
}

/// Executes one training run into a fresh directory under `root`.
pub fn execute_run(root: &Path, cfg: &TrainerConfig, verbose: bool) -> Result<PathBuf, CliError> {
    cfg.validate()?;
    let dir = create_run_dir(root, cfg)?;
    let config_path = dir.join("config.txt");
    std::fs::write(&config_path, cfg.to_canonical_text()).map_err(|e| io_err(&config_path, e))?;

    let ckpt_interval = cfg.checkpoint_interval;
    let dir_for_cb = dir.clone();
    let outcome = train_with_callback(cfg, move |trainer, detail| {
        if verbose {
            let m = &detail.metrics;
            eprintln!(
                "iter {:>4}  steps {:>8}  reward {:>10.2}  kl {:.5}  eta {:.5}",
                m.iteration, m.timesteps, m.mean_episode_reward, m.observed_kl, m.eta
            );
        }
        if (detail.metrics.iteration + 1) % ckpt_interval == 0 {
            let ckpt_dir = dir_for_cb.join(format!("checkpoints/iter{:06}", detail.metrics.iteration));
            write_checkpoint_set(
                &ckpt_dir,
                trainer.policy(),
                trainer.critic(),
                trainer.policy_factors(),
                trainer.critic_factors(),
                trainer.lr_state(),
                trainer.normalizer(),
                trainer.config().seed,
            )?;
        }
        Ok(())
    })
    .map_err(CliError::from)?;

    let metrics_path = dir.join("metrics.csv");
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &outcome.metrics).map_err(|e| io_err(&metrics_path, e))?;
    std::fs::write(&metrics_path, buf).map_err(|e| io_err(&metrics_path, e))?;

    let timing_path = dir.join("timing.csv");
    let mut buf = Vec::new();
    write_timing_csv(&mut buf, &outcome.timing).map_err(|e| io_err(&timing_path, e))?;
    std::fs::write(&timing_path, buf).map_err(|e| io_err(&timing_path, e))?;

    write_checkpoint_set(
        &dir.join("final"),
        &outcome.policy,
        &outcome.critic,
        &outcome.policy_factors,
        &outcome.critic_factors,
        &outcome.lr_state,
        &outcome.normalizer,
        cfg.seed,
    )
    .map_err(CliError::from)?;
    Ok(dir)
}

fn command_run(args: &[String]) -> Result<(), CliError> {
    let ParsedArgs {
        positional,
        sets,
        flags,
    } = parse_set_flags(args)?;
    let [config_path] = positional.as_slice() else {
        return Err(CliError::Config(ConfigError::new(
            "config",
            "run expects exactly one config path",
        )));
    };
    let config_path = PathBuf::from(config_path);
    let root = run_root(flags.get("--run-root").map(|s| s.as_str()));
    let verbose = flags.contains_key("--verbose");
    let parallel = flags.contains_key("--parallel");
    let combos = expand_sweeps(&sets);

    if parallel && combos.len() > 1 {
        return run_parallel(&config_path, &combos, &root);
    }

    for combo in combos {
        let cfg = load_config_with_overrides(&config_path, &combo)?;
        let dir = execute_run(&root, &cfg, verbose)?;
        let metrics_text = std::fs::read_to_string(dir.join("metrics.csv"))
            .map_err(|e| io_err(&dir.join("metrics.csv"), e))?;
        let rows = read_metrics_csv(&metrics_text).map_err(CliError::from)?;
        let last = rows.last();
        println!(
            "run {} : {} iterations, {} timesteps, final mean reward {}",
            dir.display(),
            rows.len(),
            last.map(|m| m.timesteps).unwrap_or(0),
            last.map(|m| m.mean_episode_reward).unwrap_or(f64::NAN),
        );
    }
    Ok(())
}

/// Seed sweeps as independent OS processes: re-invokes this executable once
/// per combination with single-valued --set flags.
fn run_parallel(
    config_path: &Path,
    combos: &[Vec<(String, String)>],
    root: &Path,
) -> Result<(), CliError> {
    let exe = std::env::current_exe()
        .map_err(|e| CliError::Runtime(format!("cannot find own executable: {e}")))?;
    let mut children = Vec::new();
    for combo in combos {
        let mut cmd = std::process::Command::new(&exe);
        cmd.arg("run").arg(config_path);
        cmd.arg("--run-root").arg(root);
        for (k, v) in combo {
            cmd.arg("--set").arg(format!("{k}={v}"));
        }
        let child = cmd
            .spawn()
            .map_err(|e| CliError::Runtime(format!("failed to spawn sweep run: {e}")))?;
        children.push(child);
    }
    let mut worst = 0;
    for mut child in children {
        let status = child
            .wait()
            .map_err(|e| CliError::Runtime(format!("failed to join sweep run: {e}")))?;
        worst = worst.max(status.code().unwrap_or(2));
    }
    match worst {
        0 => Ok(()),
        1 => Err(CliError::Config(ConfigError::new(
            "sweep",
            "a sweep run failed with a config error",
        ))),
        _ => Err(CliError::Runtime("a sweep run failed".to_string())),
    }
}

fn metric_value(m: &IterationMetrics, name: &str) -> Option<f64> {
    Some(match name {
        "mean_episode_reward" => m.mean_episode_reward,
        "surrogate_loss" => m.surrogate_loss,
        "value_loss" => m.value_loss,
        "observed_kl" => m.observed_kl,
        "eta" => m.eta,
        "clip_fraction" => m.clip_fraction,
        _ => return None,
    })
}

struct LoadedRun {
    config: TrainerConfig,
    metrics: Vec<IterationMetrics>,
}

fn load_run(dir: &Path) -> Result<LoadedRun, CliError> {
    let metrics_path = dir.join("metrics.csv");
    if !metrics_path.exists() {
        return Err(CliError::Runtime(format!(
            "MissingMetrics: no metrics.csv in {}",
            dir.display()
        )));
    }
    let metrics_text =
        std::fs::read_to_string(&metrics_path).map_err(|e| io_err(&metrics_path, e))?;
    let metrics = read_metrics_csv(&metrics_text)?;
    let config_path = dir.join("config.txt");
    let config_text =
        std::fs::read_to_string(&config_path).map_err(|e| io_err(&config_path, e))?;
    let config = crate::trainer::parse_config(&config_text)?;
    Ok(LoadedRun { config, metrics })
}

/// X-axis values for a run: raw timesteps, cumulative updates, or iteration
/// index.
fn x_values(run: &LoadedRun, axis: &str) -> Result<Vec<f64>, CliError> {
    match axis {
        "timesteps" => Ok(run.metrics.iter().map(|m| m.timesteps as f64).collect()),
        "iteration" => Ok(run.metrics.iter().map(|m| m.iteration as f64).collect()),
        "updates" => {
            let mut acc = 0u64;
            Ok(run
                .metrics
                .iter()
                .map(|m| {
                    acc += m.update_count;
                    acc as f64
                })
                .collect())
        }
        other => Err(CliError::Config(ConfigError::new(
            "--x",
            format!("unknown axis {other:?} (timesteps|updates|iteration)"),
        ))),
    }
}

/// Builds the plotted series: one per config group (same config, different
/// seeds), mean line with min/max band.
pub fn build_compare_series(
    dirs: &[PathBuf],
    metric: &str,
    axis: &str,
) -> Result<Vec<Series>, CliError> {
    if dirs.is_empty() {
        return Err(CliError::Config(ConfigError::new(
            "run_dirs",
            "compare expects at least one run directory",
        )));
    }
    let mut groups: Vec<(u64, String, Vec<LoadedRun>)> = Vec::new();
    for dir in dirs {
        let run = load_run(dir)?;
        let key = run.config.group_hash();
        match groups.iter_mut().find(|(k, _, _)| *k == key) {
            Some((_, _, runs)) => runs.push(run),
            None => {
                let label = run.config.label();
                groups.push((key, label, vec![run]));
            }
        }
    }
    let mut series = Vec::new();
    for (_, label, runs) in &groups {
        let n = runs.iter().map(|r| r.metrics.len()).min().unwrap_or(0);
        if n == 0 {
            continue;
        }
        let xs = x_values(&runs[0], axis)?[..n].to_vec();
        let mut mean = Vec::with_capacity(n);
        let mut lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        for i in 0..n {
            let mut vals = Vec::with_capacity(runs.len());
            for r in runs {
                let v = metric_value(&r.metrics[i], metric).ok_or_else(|| {
                    CliError::Config(ConfigError::new(
                        "--metric",
                        format!("unknown metric {metric:?}"),
                    ))
                })?;
                vals.push(v);
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            mean.push(m);
            lo.push(vals.iter().cloned().fold(f64::INFINITY, f64::min));
            hi.push(vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        series.push(Series {
            label: label.clone(),
            xs,
            mean,
            lo,
            hi,
        });
    }
    Ok(series)
}

fn command_compare(args: &[String]) -> Result<(), CliError> {
    let ParsedArgs {
        positional, flags, ..
    } = parse_set_flags(args)?;
    if positional.is_empty() {
        return Err(CliError::Config(ConfigError::new(
            "run_dirs",
            "compare expects at least one run directory",
        )));
    }
    let output = flags.get("--output").ok_or_else(|| {
        CliError::Config(ConfigError::new("--output", "compare requires --output FILE.svg"))
    })?;
    let metric = flags
        .get("--metric")
        .map(|s| s.as_str())
        .unwrap_or("mean_episode_reward");
    let axis = flags.get("--x").map(|s| s.as_str()).unwrap_or("timesteps");
    let dirs: Vec<PathBuf> = positional.iter().map(PathBuf::from).collect();
    let series = build_compare_series(&dirs, metric, axis)?;
    let svg = render_line_chart(&format!("{metric} vs {axis}"), axis, metric, &series);
    let out = PathBuf::from(output);
    std::fs::write(&out, svg).map_err(|e| io_err(&out, e))?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Timing aggregate for one optimizer path.
#[derive(Debug, Clone)]
pub struct PathTiming {
    pub optimizer: OptimizerKind,
    pub optim_seconds: f64,
    pub sim_seconds: f64,
    pub updates: u64,
    pub seconds_per_update: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub kfac: PathTiming,
    pub first_order: PathTiming,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut out = String::from(
            "path          optim_seconds   sim_seconds   updates   seconds_per_update\n",
        );
        for t in [&self.kfac, &self.first_order] {
            let _ = writeln!(
                out,
                "{:<13} {:<15.6} {:<13.6} {:<9} {:.8}",
                t.optimizer.as_str(),
                t.optim_seconds,
                t.sim_seconds,
                t.updates,
                t.seconds_per_update
            );
        }
        out
    }
}

fn bench_path(cfg: &TrainerConfig) -> Result<PathTiming, CliError> {
    let outcome = train(cfg)?;
    let optim_seconds: f64 = outcome.timing.iter().map(|t| t.optim_seconds).sum();
    let sim_seconds: f64 = outcome.timing.iter().map(|t| t.sim_seconds).sum();
    let updates: u64 = outcome.timing.iter().map(|t| t.updates).sum();
    Ok(PathTiming {
        optimizer: cfg.optimizer,
        optim_seconds,
        sim_seconds,
        updates,
        seconds_per_update: optim_seconds / updates.max(1) as f64,
    })
}

/// Runs both optimizer paths on the given config (path-specific epoch and
/// minibatch profiles applied) and reports wall-clock spent inside
/// optimizer updates, excluding simulation.
pub fn run_bench(
    config_path: &Path,
    overrides: &[(String, String)],
) -> Result<BenchReport, CliError> {
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        CliError::Config(ConfigError::new(
            "config",
            format!("cannot read {}: {e}", config_path.display()),
        ))
    })?;
    let mut pairs = parse_config_pairs(&text)?;
    for (k, v) in overrides {
        pairs.insert(k.clone(), v.clone());
    }
    // Each path gets its own epoch/minibatch profile.
    pairs.remove("epochs_n");
    pairs.remove("minibatch_size");

    let mut kfac_pairs = pairs.clone();
    kfac_pairs.insert("optimizer".into(), "kfac".into());
    let kfac_cfg = config_from_pairs(&kfac_pairs)?;

    let mut fo_pairs = pairs;
    fo_pairs.insert("optimizer".into(), "first_order".into());
    let fo_cfg = config_from_pairs(&fo_pairs)?;

    Ok(BenchReport {
        kfac: bench_path(&kfac_cfg)?,
        first_order: bench_path(&fo_cfg)?,
    })
}

fn command_bench(args: &[String]) -> Result<(), CliError> {
    let ParsedArgs {
        positional,
        sets,
        flags,
    } = parse_set_flags(args)?;
    let [config_path] = positional.as_slice() else {
        return Err(CliError::Config(ConfigError::new(
            "config",
            "bench expects exactly one config path",
        )));
    };
    let report = run_bench(&PathBuf::from(config_path), &sets)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(output) = flags.get("--output") {
        let out = PathBuf::from(output);
        std::fs::write(&out, &text).map_err(|e| io_err(&out, e))?;
    }
    Ok(())
}
