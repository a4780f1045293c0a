use super::{GpError, KernelConfig};

const BASE_JITTER: f64 = 1e-10;
const MAX_JITTER: f64 = 1e-6;

/// Zero-mean GP regression posterior over a growing set of observations.
///
/// The Cholesky factor of `K + (noise + jitter) I` is extended one row per
/// observation. Jitter starts at `1e-10 * signal_variance` and is escalated
/// tenfold (with a full refactorization) up to `1e-6 * signal_variance`.
#[derive(Debug, Clone)]
pub struct GpState {
    kernel: KernelConfig,
    noise_variance: f64,
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    // Row-major lower triangle; row i holds i + 1 entries.
    chol: Vec<Vec<f64>>,
    weights: Vec<f64>,
    jitter: f64,
}

impl GpState {
    pub fn new(kernel: KernelConfig, noise_variance: f64) -> Result<Self, GpError> {
        kernel.validate(None)?;
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(GpError::InvalidConfig(format!(
                "noise variance must be nonnegative, got {noise_variance}"
            )));
        }
        let jitter = BASE_JITTER * kernel.signal_variance;
        Ok(Self {
            kernel,
            noise_variance,
            points: Vec::new(),
            values: Vec::new(),
            chol: Vec::new(),
            weights: Vec::new(),
            jitter,
        })
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn observed_points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn observed_values(&self) -> &[f64] {
        &self.values
    }

    /// Diagonal jitter currently in use.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GpError> {
        let expected = self.points.first().map_or_else(
            || {
                if self.kernel.length_scale.len() > 1 {
                    self.kernel.length_scale.len()
                } else {
                    x.len()
                }
            },
            Vec::len,
        );
        if x.len() != expected {
            return Err(GpError::DimensionMismatch {
                expected,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Condition on one more observation `(point, value)`.
    pub fn observe(&mut self, point: Vec<f64>, value: f64) -> Result<(), GpError> {
        self.check_dim(&point)?;
        if !value.is_finite() {
            return Err(GpError::NonFinite("observed value"));
        }
        let row = self.extended_row(&point, self.jitter);
        self.points.push(point);
        self.values.push(value);
        match row {
            Some(row) => self.chol.push(row),
            None => self.refactor()?,
        }
        self.update_weights();
        Ok(())
    }

    // New Cholesky row for `point`, or None if the pivot is not positive.
    fn extended_row(&self, point: &[f64], jitter: f64) -> Option<Vec<f64>> {
        let t = self.chol.len();
        let mut row = Vec::with_capacity(t + 1);
        for i in 0..t {
            let k = self.kernel.cov(&self.points[i], point);
            let s: f64 = (0..i).map(|j| self.chol[i][j] * row[j]).sum();
            row.push((k - s) / self.chol[i][i]);
        }
        let d2 = self.kernel.cov(point, point) + self.noise_variance + jitter
            - row.iter().map(|v| v * v).sum::<f64>();
        if d2 > 0.0 && d2.is_finite() {
            row.push(d2.sqrt());
            Some(row)
        } else {
            None
        }
    }

    fn refactor(&mut self) -> Result<(), GpError> {
        let limit = MAX_JITTER * self.kernel.signal_variance * (1.0 + 1e-9);
        loop {
            self.jitter *= 10.0;
            if self.jitter > limit {
                return Err(GpError::IllConditioned {
                    jitter: self.jitter / 10.0,
                });
            }
            if let Some(chol) = self.factor(self.jitter) {
                self.chol = chol;
                return Ok(());
            }
        }
    }

    fn factor(&self, jitter: f64) -> Option<Vec<Vec<f64>>> {
        let n = self.points.len();
        let mut l: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(i + 1);
            for (j, lj) in l.iter().enumerate() {
                let k = self.kernel.cov(&self.points[i], &self.points[j]);
                let s: f64 = row.iter().zip(lj).map(|(a, b)| a * b).sum();
                row.push((k - s) / lj[j]);
            }
            let d2 =
                self.kernel.cov(&self.points[i], &self.points[i]) + self.noise_variance + jitter
                    - row.iter().map(|v: &f64| v * v).sum::<f64>();
            if !(d2 > 0.0 && d2.is_finite()) {
                return None;
            }
            row.push(d2.sqrt());
            l.push(row);
        }
        Some(l)
    }

    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(b.len());
        for (i, bi) in b.iter().enumerate() {
            let s: f64 = self.chol[i].iter().zip(&z).map(|(c, v)| c * v).sum();
            z.push((bi - s) / self.chol[i][i]);
        }
        z
    }

    fn update_weights(&mut self) {
        let z = self.forward(&self.values);
        let n = z.len();
        let mut w = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.chol[j][i] * w[j]).sum();
            w[i] = (z[i] - s) / self.chol[i][i];
        }
        self.weights = w;
    }

    /// Posterior mean and standard deviation of the latent function at `query`.
    pub fn posterior(&self, query: &[f64]) -> Result<(f64, f64), GpError> {
        self.check_dim(query)?;
        let prior = self.kernel.cov(query, query);
        if self.points.is_empty() {
            return Ok((0.0, prior.sqrt()));
        }
        let k: Vec<f64> = self
            .points
            .iter()
            .map(|p| self.kernel.cov(p, query))
            .collect();
        let mean: f64 = k.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        let v = self.forward(&k);
        let var = prior - v.iter().map(|x| x * x).sum::<f64>();
        if !mean.is_finite() || !var.is_finite() {
            return Err(GpError::NonFinite("posterior"));
        }
        Ok((mean, var.max(0.0).sqrt()))
    }
}

/// Posterior `(mean, std)` of `state` at `query`.
pub fn posterior(state: &GpState, query: &[f64]) -> Result<(f64, f64), GpError> {
    state.posterior(query)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel() -> KernelConfig {
        KernelConfig::default()
    }

    #[test]
    fn prior_with_no_observations() {
        let k = KernelConfig {
            signal_variance: 2.0,
            ..kernel()
        };
        let gp = GpState::new(k, 0.1).unwrap();
        let (m, s) = gp.posterior(&[0.3, 0.9]).unwrap();
        assert_eq!(m, 0.0);
        assert_eq!(s, 2f64.sqrt());
    }

    #[test]
    fn noiseless_interpolation() {
        let mut gp = GpState::new(kernel(), 1e-12).unwrap();
        gp.observe(vec![0.4], 0.7).unwrap();
        let (m, s) = gp.posterior(&[0.4]).unwrap();
        assert!((m - 0.7).abs() < 1e-6);
        assert!(s < 1e-4);
    }

    #[test]
    fn two_point_closed_form() {
        let k = KernelConfig::matern(1.5, 0.5, 1.0);
        let noise = 0.05;
        let x = [vec![0.1], vec![0.7]];
        let y = [0.3, -0.2];
        let q = [0.45];
        let mut gp = GpState::new(k.clone(), noise).unwrap();
        gp.observe(x[0].clone(), y[0]).unwrap();
        gp.observe(x[1].clone(), y[1]).unwrap();
        let (m, s) = gp.posterior(&q).unwrap();

        // Explicit 2x2 inverse of K + (noise + jitter) I.
        let eps = noise + gp.jitter();
        let a = k.cov(&x[0], &x[0]) + eps;
        let b = k.cov(&x[0], &x[1]);
        let d = k.cov(&x[1], &x[1]) + eps;
        let det = a * d - b * b;
        let inv = [[d / det, -b / det], [-b / det, a / det]];
        let ks = [k.cov(&x[0], &q), k.cov(&x[1], &q)];
        let w = [
            inv[0][0] * y[0] + inv[0][1] * y[1],
            inv[1][0] * y[0] + inv[1][1] * y[1],
        ];
        let mean = ks[0] * w[0] + ks[1] * w[1];
        let quad = ks[0] * (inv[0][0] * ks[0] + inv[0][1] * ks[1])
            + ks[1] * (inv[1][0] * ks[0] + inv[1][1] * ks[1]);
        let std = (k.cov(&q, &q) - quad).sqrt();
        assert!((m - mean).abs() < 1e-12, "{m} vs {mean}");
        assert!((s - std).abs() < 1e-12, "{s} vs {std}");
    }

    #[test]
    fn posterior_contracts() {
        let pts: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37) % 1.0).collect();
        let queries = [0.0, 0.21, 0.5, 0.93];
        let mut gp = GpState::new(kernel(), 1e-4).unwrap();
        let mut prev: Vec<f64> = queries
            .iter()
            .map(|&q| gp.posterior(&[q]).unwrap().1)
            .collect();
        for (t, &p) in pts.iter().enumerate() {
            gp.observe(vec![p], (t as f64).sin()).unwrap();
            for (i, &q) in queries.iter().enumerate() {
                let s = gp.posterior(&[q]).unwrap().1;
                assert!(s <= prev[i] + 1e-8, "t={t} q={q}: {s} > {}", prev[i]);
                prev[i] = s;
            }
        }
    }

    #[test]
    fn duplicate_noiseless_points_stay_factorable() {
        let mut gp = GpState::new(kernel(), 0.0).unwrap();
        for _ in 0..60 {
            gp.observe(vec![0.5, 0.5], 0.25).unwrap();
        }
        gp.observe(vec![0.1, 0.9], 0.1).unwrap();
        let (m, s) = gp.posterior(&[0.5, 0.5]).unwrap();
        assert!((m - 0.25).abs() < 1e-4);
        assert!(s < 1e-3);
    }

    #[test]
    fn dimension_checks() {
        let mut gp = GpState::new(kernel(), 0.0).unwrap();
        gp.observe(vec![0.0, 1.0], 1.0).unwrap();
        assert!(matches!(
            gp.observe(vec![0.0], 1.0),
            Err(GpError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert!(gp.posterior(&[0.0, 0.0, 0.0]).is_err());
        assert!(gp.observe(vec![0.0, 0.0], f64::NAN).is_err());
        assert!(GpState::new(kernel(), -1.0).is_err());
    }
}
