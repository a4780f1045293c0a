use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GpError, GpState, KernelConfig};
use crate::grid::HyperGrid;
use crate::seed;

/// How each round's query point is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitOrder {
    /// Maximize the upper confidence bound.
    #[default]
    Ucb,
    /// Cycle through the grid in index order (test harness mode).
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcbConfig {
    /// Exploration weight on the posterior standard deviation, constant in t.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Standard deviation of the Gaussian noise added to each observation.
    #[serde(default)]
    pub noise_std: f64,
    /// Noise standard deviation assumed by the GP model. Defaults to
    /// `noise_std`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_noise_std: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub visit_order: VisitOrder,
}

fn default_beta() -> f64 {
    0.1
}

fn default_rounds() -> usize {
    100
}

impl Default for UcbConfig {
    fn default() -> Self {
        Self {
            beta: default_beta(),
            rounds: default_rounds(),
            noise_std: 0.0,
            model_noise_std: None,
            seed: 0,
            kernel: KernelConfig::default(),
            visit_order: VisitOrder::Ucb,
        }
    }
}

impl UcbConfig {
    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(GpError::InvalidConfig(format!(
                "beta must be nonnegative, got {}",
                self.beta
            )));
        }
        if self.rounds == 0 {
            return Err(GpError::InvalidConfig("rounds must be at least 1".into()));
        }
        for (name, v) in [
            ("noise_std", Some(self.noise_std)),
            ("model_noise_std", self.model_noise_std),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(GpError::InvalidConfig(format!(
                        "{name} must be nonnegative, got {v}"
                    )));
                }
            }
        }
        self.kernel.validate(None)
    }

    pub fn model_noise_variance(&self) -> f64 {
        let s = self.model_noise_std.unwrap_or(self.noise_std);
        s * s
    }
}

/// One GP-UCB round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcbStep {
    pub round: usize,
    pub index: usize,
    pub lambda: Vec<f64>,
    /// Noisy observation fed to the GP.
    pub observed: f64,
    /// Oracle value before noise.
    pub clean: f64,
    /// Posterior mean at `lambda` before this round's update.
    pub mean: f64,
    /// Posterior standard deviation at `lambda` before this round's update.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcbResult {
    /// Average of the observed values over all rounds.
    pub p_hat_t: f64,
    pub trajectory: Vec<UcbStep>,
    pub max_observed: f64,
    pub argmax_observed: Vec<f64>,
    pub argmax_index: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum UcbError<E> {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("oracle failed in round {round} at grid point {index}: {source}")]
    Oracle {
        round: usize,
        index: usize,
        #[source]
        source: E,
    },
}

/// Normalized coordinates of every grid point.
pub(crate) fn normalized_points(grid: &HyperGrid) -> Vec<Vec<f64>> {
    (0..grid.len()).map(|i| grid.normalized(i)).collect()
}

fn select_normalized(
    state: &GpState,
    points: &[Vec<f64>],
    beta: f64,
) -> Result<(usize, f64, f64), GpError> {
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let (m, s) = state.posterior(p)?;
        let a = m + beta * s;
        if best.is_none_or(|(_, b, _, _)| a > b) {
            best = Some((i, a, m, s));
        }
    }
    let (i, _, m, s) = best.ok_or(GpError::EmptyGrid)?;
    Ok((i, m, s))
}

/// Grid index maximizing `mean + beta * std`; ties go to the lowest index.
/// The GP lives on min-max normalized grid coordinates.
pub fn ucb_select(state: &GpState, grid: &HyperGrid, beta: f64) -> Result<usize, GpError> {
    if grid.is_empty() {
        return Err(GpError::EmptyGrid);
    }
    let points = normalized_points(grid);
    select_normalized(state, &points, beta).map(|(i, _, _)| i)
}

/// Run GP-UCB over `grid` for `cfg.rounds` rounds.
///
/// `oracle(round, index, lambda)` returns the noiseless value at a grid
/// point; rounds are numbered from 1. Observation noise is drawn from the
/// `("ucb-noise", 0)` stream of `cfg.seed`.
pub fn ucb_run<E, F>(
    grid: &HyperGrid,
    cfg: &UcbConfig,
    mut oracle: F,
) -> Result<UcbResult, UcbError<E>>
where
    F: FnMut(usize, usize, &[f64]) -> Result<f64, E>,
{
    cfg.validate()?;
    cfg.kernel.validate(Some(grid.dim()))?;
    let points = normalized_points(grid);
    let mut state = GpState::new(cfg.kernel.clone(), cfg.model_noise_variance())?;
    let mut rng = seed::rng(cfg.seed, "ucb-noise", 0);
    let mut trajectory = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let (index, mean, std) = match cfg.visit_order {
            VisitOrder::Ucb => select_normalized(&state, &points, cfg.beta)?,
            VisitOrder::RoundRobin => {
                let i = (round - 1) % points.len();
                let (m, s) = state.posterior(&points[i])?;
                (i, m, s)
            }
        };
        let lambda = grid.point(index);
        let clean = oracle(round, index, &lambda).map_err(|source| UcbError::Oracle {
            round,
            index,
            source,
        })?;
        let z: f64 = StandardNormal.sample(&mut rng);
        let observed = clean + cfg.noise_std * z;
        state.observe(points[index].clone(), observed)?;
        trajectory.push(UcbStep {
            round,
            index,
            lambda,
            observed,
            clean,
            mean,
            std,
        });
    }

    let sum: f64 = trajectory.iter().map(|s| s.observed).sum();
    let p_hat_t = sum / trajectory.len() as f64;
    let best = trajectory.iter().fold(
        &trajectory[0],
        |b, s| if s.observed > b.observed { s } else { b },
    );
    Ok(UcbResult {
        p_hat_t,
        max_observed: best.observed,
        argmax_observed: best.lambda.clone(),
        argmax_index: best.index,
        trajectory,
    })
}

/// Posterior state after replaying the first `rounds` steps of a trajectory.
pub fn replay_state(
    grid: &HyperGrid,
    cfg: &UcbConfig,
    trajectory: &[UcbStep],
    rounds: usize,
) -> Result<GpState, GpError> {
    let mut state = GpState::new(cfg.kernel.clone(), cfg.model_noise_variance())?;
    for step in &trajectory[..rounds] {
        state.observe(grid.normalized(step.index), step.observed)?;
    }
    Ok(state)
}
