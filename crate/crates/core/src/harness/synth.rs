//! Synthetic binary classification tasks with a planted logistic model.
//!
//! Inputs come from two isotropic Gaussian clusters centred at `±mean * u`,
//! where `u` is the unit normal of the planted hyperplane. Labels are drawn
//! from the planted model, `y ~ Bernoulli(sigmoid(w*.x + b*))`, so the true
//! conditional probability is known exactly at every point.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classify::{predict_prob, LabeledDataset, LabeledPoint, LinearModel};
use crate::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset size `N`.
    pub points: usize,
    /// Distance of each cluster centre from the origin.
    pub cluster_mean: f64,
    /// Per-coordinate standard deviation within a cluster.
    pub noise: f64,
    /// `|w*|`; larger values make labels less noisy.
    pub planted_scale: f64,
    pub planted_bias: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            points: 2000,
            cluster_mean: 1.0,
            noise: 1.0,
            planted_scale: 1.5,
            planted_bias: 0.0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(LabError::param("data.points must be at least 1"));
        }
        for (name, v) in [
            ("data.cluster_mean", self.cluster_mean),
            ("data.noise", self.noise),
            ("data.planted_scale", self.planted_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LabError::param(format!("{name} must be finite and non-negative")));
            }
        }
        if !self.planted_bias.is_finite() {
            return Err(LabError::param("data.planted_bias must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub planted: LinearModel,
    direction: Vec<f64>,
    cfg: DataConfig,
}

impl PlantedTask {
    /// Planted model with a uniformly random direction in `R^dim`.
    pub fn new<R: Rng + ?Sized>(dim: usize, cfg: DataConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if dim == 0 {
            return Err(LabError::param("dimension must be at least 1"));
        }
        let direction = loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect::<Vec<_>>();
            }
        };
        let planted = LinearModel {
            weights: direction.iter().map(|u| u * cfg.planted_scale).collect(),
            bias: cfg.planted_bias,
        };
        Ok(Self {
            planted,
            direction,
            cfg,
        })
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    pub fn sample_x<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
        self.direction
            .iter()
            .map(|u| {
                let z: f64 = StandardNormal.sample(rng);
                side * self.cfg.cluster_mean * u + self.cfg.noise * z
            })
            .collect()
    }

    pub fn sample_points<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_x(rng)).collect()
    }

    pub fn true_prob(&self, x: &[f64]) -> f64 {
        predict_prob(&self.planted, x).expect("dimension checked at construction")
    }

    pub fn sample_dataset<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<LabeledDataset> {
        let points = (0..n)
            .map(|_| {
                let x = self.sample_x(rng);
                let y = u8::from(rng.random::<f64>() < self.true_prob(&x));
                LabeledPoint::new(x, y)
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn labels_follow_the_planted_model() {
        let cfg = DataConfig { cluster_mean: 2.0, planted_scale: 3.0, ..Default::default() };
        let task = PlantedTask::new(3, cfg, &mut seeded(1)).unwrap();
        let w_norm: f64 = task.planted.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!((w_norm - 3.0).abs() < 1e-12);
        let data = task.sample_dataset(4000, &mut seeded(2)).unwrap();
        let mean_label = data.points().iter().map(|p| p.y as f64).sum::<f64>() / 4000.0;
        let mean_prob = data.points().iter().map(|p| task.true_prob(&p.x)).sum::<f64>() / 4000.0;
        // Both estimate the same expectation; label sd is at most 0.5 / sqrt(4000).
        assert!((mean_label - mean_prob).abs() < 0.04);
        assert!(!data.is_single_class());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = DataConfig { noise: -1.0, ..Default::default() };
        assert!(PlantedTask::new(2, cfg, &mut seeded(1)).is_err());
        assert!(PlantedTask::new(0, DataConfig::default(), &mut seeded(1)).is_err());
    }
}
