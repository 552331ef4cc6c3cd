//! Per-iteration training metrics and their CSV serialization.
//!
//! `metrics.csv` holds the deterministic quantities (fixed seed implies a
//! bit-identical file); wall-clock measurements go to the `timing.csv`
//! sidecar so reruns of the same seed produce identical metrics files.

use std::io::Write;

use crate::error::TrainError;

#[derive(Debug, Clone)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub timesteps: u64,
    /// Mean return of the last (up to 100) completed episodes; NaN until
    /// the first episode completes.
    pub mean_episode_reward: f64,
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub observed_kl: f64,
    pub eta: f64,
    pub clip_fraction: f64,
    /// Wall-clock seconds spent inside optimizer updates this iteration
    /// (serialized to timing.csv, not metrics.csv).
    pub optim_seconds: f64,
    pub update_count: u64,
}

pub const METRICS_HEADER: &str = "iteration,timesteps,mean_episode_reward,surrogate_loss,value_loss,observed_kl,eta,clip_fraction,update_count";

pub fn write_metrics_csv<W: Write>(out: &mut W, rows: &[IterationMetrics]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            m.iteration,
            m.timesteps,
            m.mean_episode_reward,
            m.surrogate_loss,
            m.value_loss,
            m.observed_kl,
            m.eta,
            m.clip_fraction,
            m.update_count
        )?;
    }
    Ok(())
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<IterationMetrics>, TrainError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != METRICS_HEADER {
        return Err(TrainError::CheckpointFormat {
            path: "metrics.csv".into(),
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(TrainError::CheckpointFormat {
                path: "metrics.csv".into(),
                message: format!("row {} has {} fields", i + 2, fields.len()),
            });
        }
        let parse_u = |s: &str| -> Result<u64, TrainError> {
            s.parse().map_err(|_| TrainError::CheckpointFormat {
                path: "metrics.csv".into(),
                message: format!("bad integer {s:?}"),
            })
        };
        let parse_f = |s: &str| -> Result<f64, TrainError> {
            s.parse().map_err(|_| TrainError::CheckpointFormat {
                path: "metrics.csv".into(),
                message: format!("bad float {s:?}"),
            })
        };
        rows.push(IterationMetrics {
            iteration: parse_u(fields[0])?,
            timesteps: parse_u(fields[1])?,
            mean_episode_reward: parse_f(fields[2])?,
            surrogate_loss: parse_f(fields[3])?,
            value_loss: parse_f(fields[4])?,
            observed_kl: parse_f(fields[5])?,
            eta: parse_f(fields[6])?,
            clip_fraction: parse_f(fields[7])?,
            optim_seconds: f64::NAN,
            update_count: parse_u(fields[8])?,
        });
    }
    Ok(rows)
}

/// One row of the wall-clock sidecar.
#[derive(Debug, Clone)]
pub struct TimingRow {
    pub iteration: u64,
    pub optim_seconds: f64,
    pub sim_seconds: f64,
    pub updates: u64,
}

pub const TIMING_HEADER: &str = "iteration,optim_seconds,sim_seconds,updates";

pub fn write_timing_csv<W: Write>(out: &mut W, rows: &[TimingRow]) -> std::io::Result<()> {
    writeln!(out, "{TIMING_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.iteration, r.optim_seconds, r.sim_seconds, r.updates
        )?;
    }
    Ok(())
}

pub fn read_timing_csv(text: &str) -> Result<Vec<TimingRow>, TrainError> {
    let mut lines = text.lines();
    if lines.next() != Some(TIMING_HEADER) {
        return Err(TrainError::CheckpointFormat {
            path: "timing.csv".into(),
            message: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(TrainError::CheckpointFormat {
                path: "timing.csv".into(),
                message: format!("bad row {line:?}"),
            });
        }
        let bad = |s: &str| TrainError::CheckpointFormat {
            path: "timing.csv".into(),
            message: format!("bad value {s:?}"),
        };
        rows.push(TimingRow {
            iteration: f[0].parse().map_err(|_| bad(f[0]))?,
            optim_seconds: f[1].parse().map_err(|_| bad(f[1]))?,
            sim_seconds: f[2].parse().map_err(|_| bad(f[2]))?,
            updates: f[3].parse().map_err(|_| bad(f[3]))?,
        });
    }
    Ok(rows)
}
