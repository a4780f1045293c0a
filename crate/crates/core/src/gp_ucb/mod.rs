//! Gaussian-process UCB search over a finite hyperparameter grid.
//!
//! Also home to the greedy information-gain estimate and the conservative
//! rejection threshold that accounts for the search's estimation error.

mod gp;
mod kernel;
mod ucb;

use thiserror::Error;

pub use gp::{posterior, GpState};
pub use kernel::{kernel_eval, KernelConfig, KernelFamily};
pub use ucb::{
    replay_state, ucb_run, ucb_select, UcbConfig, UcbError, UcbResult, UcbStep, VisitOrder,
};

use crate::grid::HyperGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("Gram matrix not positive definite even with jitter {jitter:e}")]
    IllConditioned { jitter: f64 },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("grid is empty")]
    EmptyGrid,
}

/// Greedy information-gain estimates `gamma_1, ..., gamma_T`.
///
/// Each step adds the not-yet-chosen grid point with the largest posterior
/// variance (lowest index on ties) and accrues
/// `0.5 * ln(1 + var / noise_variance)`; by the chain rule the running sum is
/// `0.5 * ln det(I + K_S / noise_variance)` for the chosen set `S`. Once the
/// grid is exhausted the estimate stays flat.
pub fn info_gain_curve(
    kernel: &KernelConfig,
    grid: &HyperGrid,
    noise_variance: f64,
    rounds: usize,
) -> Result<Vec<f64>, GpError> {
    if rounds == 0 {
        return Err(GpError::InvalidConfig("T must be at least 1".into()));
    }
    if !(noise_variance > 0.0 && noise_variance.is_finite()) {
        return Err(GpError::InvalidConfig(format!(
            "information gain needs a positive noise variance, got {noise_variance}"
        )));
    }
    kernel.validate(Some(grid.dim()))?;
    let points = ucb::normalized_points(grid);
    let mut state = GpState::new(kernel.clone(), noise_variance)?;
    let mut chosen = vec![false; points.len()];
    let mut gamma = 0.0;
    let mut curve = Vec::with_capacity(rounds);
    for _ in 0..rounds.min(points.len()) {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let (_, s) = state.posterior(p)?;
            let var = s * s;
            if best.is_none_or(|(_, b)| var > b) {
                best = Some((i, var));
            }
        }
        let (i, var) = best.ok_or(GpError::EmptyGrid)?;
        gamma += 0.5 * (var / noise_variance).ln_1p();
        chosen[i] = true;
        state.observe(points[i].clone(), 0.0)?;
        curve.push(gamma);
    }
    curve.resize(rounds, gamma);
    Ok(curve)
}

/// Greedy estimate of the maximum information gain after `rounds` rounds.
pub fn info_gain(
    kernel: &KernelConfig,
    grid: &HyperGrid,
    noise_variance: f64,
    rounds: usize,
) -> Result<f64, GpError> {
    Ok(*info_gain_curve(kernel, grid, noise_variance, rounds)?
        .last()
        .expect("rounds >= 1"))
}

/// Reduced rejection level for the GP-UCB estimate:
///
/// ```text
/// zeta' = zeta - c * (B sqrt(gamma_T / T) + sqrt(gamma_T (gamma_T + ln(1/delta)) / T)) - delta
/// ```
///
/// The result may be nonpositive; callers must then refuse to certify.
pub fn conservative_threshold(
    zeta: f64,
    delta: f64,
    b: f64,
    gamma_t: f64,
    rounds: usize,
    scale_c: f64,
) -> Result<f64, GpError> {
    if !(delta > 0.0 && delta < zeta && zeta < 1.0) {
        return Err(GpError::InvalidConfig(format!(
            "need 0 < delta < zeta < 1, got delta={delta}, zeta={zeta}"
        )));
    }
    if !(b >= 0.0 && gamma_t >= 0.0 && scale_c > 0.0) || rounds == 0 {
        return Err(GpError::InvalidConfig(format!(
            "need B >= 0, gamma_T >= 0, T >= 1, c > 0; got B={b}, gamma_T={gamma_t}, T={rounds}, c={scale_c}"
        )));
    }
    let t = rounds as f64;
    let regret = b * (gamma_t / t).sqrt() + (gamma_t * (gamma_t + (1.0 / delta).ln()) / t).sqrt();
    Ok(zeta - scale_c * regret - delta)
}

/// Smallest round count whose threshold is positive, given the
/// information-gain curve over the first `curve.len()` rounds (assumed
/// flat afterwards, as it is once the grid is exhausted).
pub fn min_rounds_for_positive_threshold(
    zeta: f64,
    delta: f64,
    b: f64,
    scale_c: f64,
    curve: &[f64],
) -> Result<usize, GpError> {
    let positive = |t: usize, g: f64| -> Result<bool, GpError> {
        Ok(conservative_threshold(zeta, delta, b, g, t, scale_c)? > 0.0)
    };
    for (i, &g) in curve.iter().enumerate() {
        if positive(i + 1, g)? {
            return Ok(i + 1);
        }
    }
    let g = curve.last().copied().unwrap_or(0.0);
    // For fixed gamma the threshold increases in T; solve, then fix rounding.
    let root = scale_c * (b * g.sqrt() + (g * (g + (1.0 / delta).ln())).sqrt()) / (zeta - delta);
    let mut t = ((root * root).floor() as usize).max(curve.len() + 1);
    while t > curve.len() + 1 && positive(t - 1, g)? {
        t -= 1;
    }
    while !positive(t, g)? {
        t += 1;
    }
    Ok(t)
}
