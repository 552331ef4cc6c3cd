//! Running mean/variance normalization of observations.
//!
//! The statistics update online during collection and freeze into
//! checkpoints so evaluation sees exactly the training-time transform.

use ndarray::Array1;

const NORM_EPS: f64 = 1e-8;
const CLIP: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct ObsNormalizer {
    pub enabled: bool,
    pub mean: Array1<f64>,
    /// Population variance tracked via a running sum of squared deviations.
    pub var: Array1<f64>,
    pub count: f64,
    m2: Array1<f64>,
}

impl ObsNormalizer {
    pub fn new(dim: usize, enabled: bool) -> Self {
        Self {
            enabled,
            mean: Array1::zeros(dim),
            var: Array1::ones(dim),
            count: 0.0,
            m2: Array1::zeros(dim),
        }
    }

    /// Restores a frozen normalizer from checkpointed statistics.
    pub fn from_stats(mean: Array1<f64>, var: Array1<f64>, count: f64, enabled: bool) -> Self {
        let m2 = &var * count.max(0.0);
        Self {
            enabled,
            mean,
            var,
            count,
            m2,
        }
    }

    /// Welford update with a single observation.
    pub fn update(&mut self, obs: &Array1<f64>) {
        if !self.enabled {
            return;
        }
        self.count += 1.0;
        for d in 0..self.mean.len() {
            let delta = obs[d] - self.mean[d];
            self.mean[d] += delta / self.count;
            let delta2 = obs[d] - self.mean[d];
            self.m2[d] += delta * delta2;
            self.var[d] = if self.count > 0.0 {
                self.m2[d] / self.count
            } else {
                1.0
            };
        }
    }

    pub fn normalize(&self, obs: &Array1<f64>) -> Array1<f64> {
        if !self.enabled || self.count < 2.0 {
            return obs.clone();
        }
        let mut out = obs.clone();
        for d in 0..out.len() {
            out[d] = ((obs[d] - self.mean[d]) / (self.var[d] + NORM_EPS).sqrt()).clamp(-CLIP, CLIP);
        }
        out
    }

    pub fn update_and_normalize(&mut self, obs: &Array1<f64>) -> Array1<f64> {
        self.update(obs);
        self.normalize(obs)
    }
}
