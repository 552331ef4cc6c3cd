//! End-to-end tests of the `ppokfac` binary: run directories, sweeps,
//! exit codes, compare/bench outputs.

use std::path::{Path, PathBuf};
use std::process::Command;

use ppokfac::svgplot::xml_is_well_formed;
use ppokfac::trainer::read_metrics_csv;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ppokfac"))
}

fn fresh_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "ppokfac-cli-{tag}-{}",
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const TINY: &str = "env_id = pendulum\nbatch_size = 256\ntotal_timesteps = 512\nseed = 0\n";

#[test]
fn run_writes_a_complete_run_directory() {
    let dir = fresh_dir("run");
    let cfg = write_config(&dir, "tiny.cfg", TINY);
    let root = dir.join("runs");
    let out = bin()
        .args(["run", cfg.to_str().unwrap(), "--run-root", root.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let entries: Vec<_> = std::fs::read_dir(&root).unwrap().collect();
    assert_eq!(entries.len(), 1);
    let run_dir = entries[0].as_ref().unwrap().path();
    for name in [
        "config.txt",
        "metrics.csv",
        "timing.csv",
        "final/policy.txt",
        "final/value.txt",
        "final/optim.txt",
    ] {
        assert!(run_dir.join(name).exists(), "{name} missing");
    }
    let metrics = read_metrics_csv(&std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap())
        .unwrap();
    assert_eq!(metrics.len(), 2);
    assert_eq!(metrics[1].timesteps, 512);
}

#[test]
fn invalid_config_exits_one_and_names_the_field() {
    let dir = fresh_dir("badcfg");
    let cfg = write_config(
        &dir,
        "bad.cfg",
        "env_id = pendulum\nclip_epsilon = 1.5\ntotal_timesteps = 256\n",
    );
    let out = bin()
        .args(["run", cfg.to_str().unwrap(), "--run-root", dir.join("runs").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("clip_epsilon"), "stderr: {stderr}");
}

#[test]
fn unknown_subcommand_exits_one() {
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_sweep_creates_distinct_run_directories() {
    let dir = fresh_dir("sweep");
    let cfg = write_config(&dir, "tiny.cfg", TINY);
    let root = dir.join("runs");
    let out = bin()
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--run-root",
            root.to_str().unwrap(),
            "--set",
            "seed=1,2,3",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let runs: Vec<PathBuf> = std::fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(runs.len(), 3);
    // Distinct seeds produce distinct metrics.
    let mut bodies: Vec<String> = runs
        .iter()
        .map(|r| std::fs::read_to_string(r.join("metrics.csv")).unwrap())
        .collect();
    bodies.sort();
    bodies.dedup();
    assert_eq!(bodies.len(), 3, "sweep metrics should differ by seed");
}

#[test]
fn periodic_checkpoints_are_written() {
    let dir = fresh_dir("ckpt");
    let cfg = write_config(&dir, "tiny.cfg", TINY);
    let root = dir.join("runs");
    let out = bin()
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--run-root",
            root.to_str().unwrap(),
            "--set",
            "checkpoint_interval=1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let run_dir = std::fs::read_dir(&root).unwrap().next().unwrap().unwrap().path();
    for iter in ["iter000000", "iter000001"] {
        let ckpt = run_dir.join("checkpoints").join(iter);
        for name in ["policy.txt", "value.txt", "optim.txt"] {
            assert!(ckpt.join(name).exists(), "{iter}/{name} missing");
        }
    }
    // Checkpoints load back.
    let (policy, _) =
        ppokfac::checkpoint::load_policy(&run_dir.join("checkpoints/iter000000/policy.txt"))
            .unwrap();
    assert_eq!(policy.net.in_dim(), 3);
    let optim =
        ppokfac::checkpoint::load_optim_state(&run_dir.join("checkpoints/iter000001/optim.txt"))
            .unwrap();
    assert!(optim.policy_factors.update_count >= 1);
    assert!(!optim.lr_state.history.is_empty());
}

#[test]
fn rerunning_never_overwrites() {
    let dir = fresh_dir("immutable");
    let cfg = write_config(&dir, "tiny.cfg", TINY);
    let root = dir.join("runs");
    for _ in 0..2 {
        let out = bin()
            .args(["run", cfg.to_str().unwrap(), "--run-root", root.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    assert_eq!(std::fs::read_dir(&root).unwrap().count(), 2);
}

#[test]
fn compare_renders_valid_svg_with_bands_and_updates_axis() {
    let dir = fresh_dir("compare");
    let cfg = write_config(&dir, "tiny.cfg", TINY);
    let root = dir.join("runs");
    // Two seeds of the kfac config and one first-order run.
    let status = bin()
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--run-root",
            root.to_str().unwrap(),
            "--set",
            "seed=1,2",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let status = bin()
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--run-root",
            root.to_str().unwrap(),
            "--set",
            "optimizer=first_order",
        ])
        .status()
        .unwrap();
    assert!(status.success());

    let runs: Vec<String> = std::fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path().display().to_string())
        .collect();
    assert_eq!(runs.len(), 3);
    let svg_path = dir.join("out.svg");
    let mut args = vec!["compare".to_string()];
    args.extend(runs.clone());
    args.extend([
        "--output".into(),
        svg_path.display().to_string(),
        "--metric".into(),
        "observed_kl".into(),
        "--x".into(),
        "timesteps".into(),
    ]);
    let out = bin().args(&args).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert!(xml_is_well_formed(&svg));
    // Two config groups: two polylines, one band (the two-seed group).
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.matches("<polygon").count() >= 1);
    // No external resource references.
    assert!(!svg.contains("href"));

    // Updates on the x axis: at equal timesteps the kfac group spans
    // 2 updates/iteration vs 320/... here 256/64*10 = 40 per iteration.
    let series = ppokfac::cli::build_compare_series(
        &runs.iter().map(PathBuf::from).collect::<Vec<_>>(),
        "mean_episode_reward",
        "updates",
    )
    .unwrap();
    assert_eq!(series.len(), 2);
    let max_x: Vec<f64> = series
        .iter()
        .map(|s| s.xs.iter().cloned().fold(0.0, f64::max))
        .collect();
    let ratio = max_x[1].max(max_x[0]) / max_x[0].min(max_x[1]);
    assert_eq!(ratio, 20.0, "update-count span ratio (40 vs 2 per iteration)");
}

#[test]
fn bench_reports_both_paths() {
    let dir = fresh_dir("bench");
    let cfg = write_config(
        &dir,
        "bench.cfg",
        "env_id = pendulum\nbatch_size = 256\ntotal_timesteps = 512\nseed = 0\n",
    );
    let report_path = dir.join("report.txt");
    let out = bin()
        .args([
            "bench",
            cfg.to_str().unwrap(),
            "--output",
            report_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&report_path).unwrap();
    assert!(text.contains("kfac"));
    assert!(text.contains("first_order"));
    assert!(text.contains("seconds_per_update"));
}

#[test]
fn bench_zero_iteration_config_reports_zero_timings() {
    let dir = fresh_dir("bench0");
    let cfg = write_config(
        &dir,
        "zero.cfg",
        "env_id = pendulum\nbatch_size = 256\ntotal_timesteps = 0\nseed = 0\n",
    );
    let report = ppokfac::cli::run_bench(&cfg, &[]).unwrap();
    assert_eq!(report.kfac.updates, 0);
    assert_eq!(report.first_order.updates, 0);
    assert_eq!(report.kfac.optim_seconds, 0.0);
    assert_eq!(report.kfac.sim_seconds, 0.0);
    assert_eq!(report.kfac.seconds_per_update, 0.0);
    assert_eq!(report.first_order.optim_seconds, 0.0);
}

#[test]
fn bench_per_update_cost_is_stable_across_repeats() {
    let dir = fresh_dir("bench-repeat");
    let cfg = write_config(
        &dir,
        "small.cfg",
        "env_id = pendulum\nbatch_size = 1024\ntotal_timesteps = 2048\nseed = 0\n",
    );
    let a = ppokfac::cli::run_bench(&cfg, &[]).unwrap();
    let b = ppokfac::cli::run_bench(&cfg, &[]).unwrap();
    let ratio = (a.kfac.seconds_per_update / b.kfac.seconds_per_update)
        .max(b.kfac.seconds_per_update / a.kfac.seconds_per_update);
    assert!(
        ratio < 2.0,
        "per-update cost unstable: {} vs {}",
        a.kfac.seconds_per_update,
        b.kfac.seconds_per_update
    );
}

#[test]
fn parallel_sweep_spawns_independent_runs() {
    let dir = fresh_dir("parsweep");
    let cfg = write_config(&dir, "tiny.cfg", TINY);
    let root = dir.join("runs");
    let out = bin()
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--run-root",
            root.to_str().unwrap(),
            "--set",
            "seed=5,6",
            "--parallel",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let runs: Vec<PathBuf> = std::fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(runs.len(), 2);
    for run in &runs {
        assert!(run.join("metrics.csv").exists());
    }
}

#[test]
fn list_envs_prints_all_ids() {
    let out = bin().args(["list-envs"]).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    for id in ["pendulum", "pointmass", "lqr"] {
        assert!(stdout.contains(id));
    }
}

#[test]
fn run_root_env_var_is_honored() {
    let dir = fresh_dir("envvar");
    let cfg = write_config(&dir, "tiny.cfg", TINY);
    let root = dir.join("from-env");
    let out = bin()
        .env("PPOKFAC_RUN_ROOT", root.to_str().unwrap())
        .args(["run", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(&root).unwrap().count(), 1);
}

#[test]
fn metrics_csv_round_trips_through_compare_parsing() {
    let dir = fresh_dir("roundtrip");
    let cfg = write_config(&dir, "tiny.cfg", TINY);
    let root = dir.join("runs");
    let out = bin()
        .args(["run", cfg.to_str().unwrap(), "--run-root", root.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let run_dir = std::fs::read_dir(&root).unwrap().next().unwrap().unwrap().path();
    let text = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    let rows = read_metrics_csv(&text).unwrap();
    // Re-serialize and compare bytes: the shortest round-trip float format
    // guarantees exact recovery.
    let mut buf = Vec::new();
    ppokfac::trainer::write_metrics_csv(&mut buf, &rows).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), text);
}
