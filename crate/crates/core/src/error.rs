//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    /// Cholesky factorization hit a non-positive pivot. Usually means the
    /// damping is too small for the factor at hand.
    #[error("matrix of dim {dim} is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { dim: usize, pivot: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not symmetric: max |m[i][j] - m[j][i]| = {max_dev:e}")]
    NotSymmetric { max_dev: f64 },

    #[error("matrix dim must be >= 1")]
    EmptyMatrix,
}

#[derive(Debug, Error)]
pub enum NnError {
    /// NaN/Inf appeared during a forward pass; signals diverged parameters.
    #[error("non-finite output at layer {layer}")]
    NonFiniteOutput { layer: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Error)]
pub enum EnvError {
    /// Physics produced NaN/Inf; the episode ends here.
    #[error("environment state became non-finite at step {step}")]
    NonFiniteState { step: usize },

    #[error("unknown environment id {0:?}")]
    UnknownEnv(String),

    /// Riccati fixed-point iteration did not reach tolerance in time.
    #[error("Riccati iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("parameter update produced non-finite values in layer {layer}")]
    NonFiniteUpdate { layer: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Preconditioned steps need at least one factor accumulation first.
    #[error("Kronecker factors have no accumulated statistics yet")]
    FactorsNotReady,
}

#[derive(Debug, Error)]
#[error("config error in field {field:?}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: u64,
        #[source]
        source: Box<TrainError>,
    },

    #[error(transparent)]
    Env(#[from] EnvError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error(transparent)]
    Optim(#[from] OptimError),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint format error in {path}: {message}")]
    CheckpointFormat { path: String, message: String },
}

impl TrainError {
    pub fn at_iteration(self, iteration: u64) -> Self {
        TrainError::Iteration {
            iteration,
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.into(),
            source,
        }
    }
}
