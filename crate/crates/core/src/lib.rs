//! Proximal policy optimization with Kronecker-factored natural-gradient
//! updates (and a first-order baseline), on small built-in continuous
//! control tasks, with an experiment harness for seeded runs, CSV metrics,
//! and SVG learning curves.

pub mod checkpoint;
pub mod cli;
pub mod envs;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod obs_norm;
pub mod optim;
pub mod rollout;
pub mod svgplot;
pub mod trainer;

pub use error::{ConfigError, EnvError, LinalgError, NnError, OptimError, TrainError};
