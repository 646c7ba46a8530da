use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;

/// Univariate normal with a floored standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianModel {
    pub mean: f64,
    pub std: f64,
}

impl GaussianModel {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() {
            return Err(Error::Numeric(format!("non-finite gaussian ({mean}, {std})")));
        }
        Ok(Self {
            mean,
            std: std.max(STD_FLOOR),
        })
    }

    /// Sample mean and unbiased standard deviation (floored). A single
    /// sample gives the floor.
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("cannot fit a gaussian to no samples".into()));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self::new(mean, var.sqrt())
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -0.5 * z * z - self.std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        Normal::new(self.mean, self.std)
            .expect("std is positive and finite")
            .cdf(x)
    }
}
