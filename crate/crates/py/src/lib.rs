//! Python bindings: environments, trainer configs, training runs, and
//! trained policies, mirroring the CLI surface.

// The pymethods expansion triggers useless_conversion on this clippy.
#![allow(clippy::useless_conversion)]

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ppokfac::checkpoint::{load_optim_state, load_policy};
use ppokfac::cli::execute_run;
use ppokfac::envs::{lqr_optimal_for, make_env, Environment, LqrSystem, ENV_IDS};
use ppokfac::nn::forward_policy;
use ppokfac::obs_norm::ObsNormalizer;
use ppokfac::trainer::{
    config_from_pairs, parse_config_pairs, train, IterationMetrics, TrainerConfig,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Known environment ids.
#[pyfunction]
fn list_envs() -> Vec<String> {
    ENV_IDS.iter().map(|s| s.to_string()).collect()
}

/// A seedable environment instance.
#[pyclass(name = "Env", unsendable)]
struct PyEnv {
    inner: Box<dyn Environment>,
}

#[pymethods]
impl PyEnv {
    #[new]
    fn new(id: &str) -> PyResult<Self> {
        Ok(Self {
            inner: make_env(id).map_err(value_err)?,
        })
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner.reset(seed).to_vec()
    }

    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool)> {
        let spec_dim = self.inner.spec().action_dim;
        if action.len() != spec_dim {
            return Err(value_err(format!(
                "action has {} dims, expected {spec_dim}",
                action.len()
            )));
        }
        let result = self
            .inner
            .step(&Array1::from_vec(action))
            .map_err(runtime_err)?;
        Ok((result.next_state.to_vec(), result.reward, result.done))
    }

    fn spec<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let spec = self.inner.spec();
        let d = PyDict::new_bound(py);
        d.set_item("id", spec.id)?;
        d.set_item("obs_dim", spec.obs_dim)?;
        d.set_item("action_dim", spec.action_dim)?;
        d.set_item("max_episode_steps", spec.max_episode_steps)?;
        d.set_item("action_bounds", spec.action_bounds.clone())?;
        Ok(d)
    }

    fn action_clip_events(&self) -> u64 {
        self.inner.action_clip_events()
    }
}

/// Trainer configuration, built from defaults plus `key = value` overrides
/// using the same field names as the config file format.
#[pyclass(name = "Config")]
#[derive(Clone)]
struct PyConfig {
    inner: TrainerConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (env_id, optimizer = "kfac"))]
    fn new(env_id: &str, optimizer: &str) -> PyResult<Self> {
        let inner = match optimizer {
            "kfac" => TrainerConfig::defaults(env_id),
            "first_order" => TrainerConfig::defaults_first_order(env_id),
            other => return Err(value_err(format!("unknown optimizer {other:?}"))),
        };
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let pairs = parse_config_pairs(text).map_err(value_err)?;
        Ok(Self {
            inner: config_from_pairs(&pairs).map_err(value_err)?,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut pairs = parse_config_pairs(&self.inner.to_canonical_text()).map_err(value_err)?;
        pairs.insert(key.to_string(), value.to_string());
        self.inner = config_from_pairs(&pairs).map_err(value_err)?;
        Ok(())
    }

    fn to_text(&self) -> String {
        self.inner.to_canonical_text()
    }

    fn label(&self) -> String {
        self.inner.label()
    }

    fn __repr__(&self) -> String {
        format!("Config({})", self.inner.label())
    }
}

fn metrics_to_dict<'py>(py: Python<'py>, m: &IterationMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("iteration", m.iteration)?;
    d.set_item("timesteps", m.timesteps)?;
    d.set_item("mean_episode_reward", m.mean_episode_reward)?;
    d.set_item("surrogate_loss", m.surrogate_loss)?;
    d.set_item("value_loss", m.value_loss)?;
    d.set_item("observed_kl", m.observed_kl)?;
    d.set_item("eta", m.eta)?;
    d.set_item("clip_fraction", m.clip_fraction)?;
    d.set_item("optim_seconds", m.optim_seconds)?;
    d.set_item("update_count", m.update_count)?;
    Ok(d)
}

/// A trained Gaussian policy plus its frozen observation normalizer.
#[pyclass(name = "Policy")]
struct PyPolicy {
    policy: ppokfac::nn::GaussianPolicy,
    normalizer: ObsNormalizer,
}

#[pymethods]
impl PyPolicy {
    /// Loads `final/policy.txt` and `final/optim.txt` from a run directory.
    #[staticmethod]
    fn load(run_dir: &str) -> PyResult<Self> {
        let dir = PathBuf::from(run_dir);
        let (policy, _) = load_policy(&dir.join("final/policy.txt")).map_err(runtime_err)?;
        let optim = load_optim_state(&dir.join("final/optim.txt")).map_err(runtime_err)?;
        Ok(Self {
            policy,
            normalizer: optim.normalizer,
        })
    }

    /// Mean action (deterministic) for an observation.
    fn act(&self, obs: Vec<f64>) -> PyResult<Vec<f64>> {
        let norm = self.normalizer.normalize(&Array1::from_vec(obs));
        let row: Array2<f64> = norm.insert_axis(Axis(0));
        let (heads, _) = forward_policy(&self.policy, &row).map_err(runtime_err)?;
        Ok(heads.means.row(0).to_vec())
    }

    fn action_dim(&self) -> usize {
        self.policy.action_dim()
    }

    fn log_std(&self) -> Vec<f64> {
        self.policy.log_std.to_vec()
    }
}

/// Trains in-process and returns (metrics, policy).
#[pyfunction]
fn train_config(py: Python<'_>, config: &PyConfig) -> PyResult<(Vec<Py<PyDict>>, PyPolicy)> {
    let outcome = train(&config.inner).map_err(runtime_err)?;
    let mut rows = Vec::with_capacity(outcome.metrics.len());
    for m in &outcome.metrics {
        rows.push(metrics_to_dict(py, m)?.unbind());
    }
    Ok((
        rows,
        PyPolicy {
            policy: outcome.policy,
            normalizer: outcome.normalizer,
        },
    ))
}

/// Runs training into a fresh run directory under `root` (metrics.csv,
/// timing.csv, config snapshot, checkpoints) and returns its path.
#[pyfunction]
fn run_to_dir(config: &PyConfig, root: &str) -> PyResult<String> {
    let dir = execute_run(Path::new(root), &config.inner, false)
        .map_err(|e| runtime_err(format!("{e}")))?;
    Ok(dir.display().to_string())
}

/// Optimal gain and average cost of the built-in LQR task:
/// returns (K*, J*) with the optimal action being -K* x.
#[pyfunction]
fn lqr_optimal() -> PyResult<(Vec<Vec<f64>>, f64)> {
    let sol = lqr_optimal_for(&LqrSystem::benchmark()).map_err(runtime_err)?;
    let gain = sol
        .gain
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    Ok((gain, sol.average_cost))
}

#[pymodule]
fn ppokfac_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnv>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(list_envs, m)?)?;
    m.add_function(wrap_pyfunction!(train_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_to_dir, m)?)?;
    m.add_function(wrap_pyfunction!(lqr_optimal, m)?)?;
    Ok(())
}
