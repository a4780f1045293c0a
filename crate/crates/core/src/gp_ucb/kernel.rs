use serde::{Deserialize, Serialize};

use super::GpError;

/// Matern covariance with half-integer smoothness.
///
/// Only `nu` in {1/2, 3/2, 5/2} is supported; these have closed forms and
/// need no Bessel functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default)]
    pub family: KernelFamily,
    #[serde(default = "default_smoothness")]
    pub smoothness: f64,
    /// One entry (isotropic) or one per dimension.
    #[serde(default = "default_length_scale")]
    pub length_scale: Vec<f64>,
    #[serde(default = "default_signal_variance")]
    pub signal_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Matern,
}

fn default_smoothness() -> f64 {
    2.5
}

fn default_length_scale() -> Vec<f64> {
    vec![1.0]
}

fn default_signal_variance() -> f64 {
    1.0
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern,
            smoothness: default_smoothness(),
            length_scale: default_length_scale(),
            signal_variance: default_signal_variance(),
        }
    }
}

impl KernelConfig {
    pub fn matern(smoothness: f64, length_scale: f64, signal_variance: f64) -> Self {
        Self {
            family: KernelFamily::Matern,
            smoothness,
            length_scale: vec![length_scale],
            signal_variance,
        }
    }

    /// Check the hyperparameters, and that they fit `dim`-dimensional inputs
    /// when `dim` is given.
    pub fn validate(&self, dim: Option<usize>) -> Result<(), GpError> {
        if ![0.5, 1.5, 2.5].contains(&self.smoothness) {
            return Err(GpError::InvalidKernel(format!(
                "Matern smoothness must be 0.5, 1.5 or 2.5, got {}",
                self.smoothness
            )));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(GpError::InvalidKernel(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if self.length_scale.is_empty()
            || self
                .length_scale
                .iter()
                .any(|&l| !(l > 0.0 && l.is_finite()))
        {
            return Err(GpError::InvalidKernel(format!(
                "length scales must be positive, got {:?}",
                self.length_scale
            )));
        }
        if let Some(d) = dim {
            if self.length_scale.len() != 1 && self.length_scale.len() != d {
                return Err(GpError::DimensionMismatch {
                    expected: d,
                    got: self.length_scale.len(),
                });
            }
        }
        Ok(())
    }

    /// Covariance of two points; assumes a validated config and equal lengths.
    pub(crate) fn cov(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(y)
            .enumerate()
            .map(|(i, (a, b))| {
                let l = if self.length_scale.len() == 1 {
                    self.length_scale[0]
                } else {
                    self.length_scale[i]
                };
                let d = (a - b) / l;
                d * d
            })
            .sum();
        let r = r2.sqrt();
        let s = self.signal_variance;
        if self.smoothness == 0.5 {
            s * (-r).exp()
        } else if self.smoothness == 1.5 {
            let z = 3f64.sqrt() * r;
            s * (1.0 + z) * (-z).exp()
        } else {
            let z = 5f64.sqrt() * r;
            s * (1.0 + z + z * z / 3.0) * (-z).exp()
        }
    }
}

/// Kernel value `k(x, y)`.
pub fn kernel_eval(cfg: &KernelConfig, x: &[f64], y: &[f64]) -> Result<f64, GpError> {
    if x.len() != y.len() {
        return Err(GpError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    cfg.validate(Some(x.len()))?;
    Ok(cfg.cov(x, y))
}
