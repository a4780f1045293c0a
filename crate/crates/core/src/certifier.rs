//! The safety test: reject "some configuration has risk above alpha" when
//! the combined p-value is at most the rejection level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp_ucb::{self, GpError, UcbConfig, UcbError, UcbResult};
use crate::grid::HyperGrid;
use crate::hb_stats::{self, StatsError};
use crate::oracle::{
    AnalyticOracle, Coupling, EvalSeed, Metadata, OracleError, RiskOracle, Surface,
};
use crate::seed;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("invalid safety spec: {0}")]
    Spec(String),
    #[error("oracle failed at lambda {lambda:?}: {source}")]
    Oracle {
        lambda: Vec<f64>,
        #[source]
        source: OracleError,
    },
    #[error(transparent)]
    OracleSetup(#[from] OracleError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("{0}")]
    Precondition(String),
}

/// Certification target: risk threshold `alpha`, Type-I level `zeta`, and
/// the GP-UCB confidence `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetySpec {
    pub alpha: f64,
    pub zeta: f64,
    pub delta: f64,
}

impl Default for SafetySpec {
    fn default() -> Self {
        Self {
            alpha: 0.10,
            zeta: 0.05,
            delta: 0.01,
        }
    }
}

impl SafetySpec {
    pub fn validate(&self) -> Result<(), CertifyError> {
        let SafetySpec { alpha, zeta, delta } = *self;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CertifyError::Spec(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        if !(delta > 0.0 && delta < zeta && zeta < 1.0) {
            return Err(CertifyError::Spec(format!(
                "need 0 < delta < zeta < 1, got delta={delta}, zeta={zeta}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grid,
    GpUcb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    CertifiedSafe,
    NotCertified,
    /// The threshold was not positive; certification refused.
    Indeterminate,
}

impl Decision {
    /// Reject iff `p <= threshold`; never certify against a threshold <= 0.
    pub fn from_test(p: f64, threshold: f64) -> Self {
        if threshold.is_nan() || threshold <= 0.0 {
            Decision::Indeterminate
        } else if p <= threshold {
            Decision::CertifiedSafe
        } else {
            Decision::NotCertified
        }
    }
}

/// Constants of the conservative GP-UCB threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdParams {
    /// Smoothness bound `B` of the p-value function.
    pub b: f64,
    pub scale_c: f64,
    /// Noise variance used when estimating the information gain.
    pub gain_noise_variance: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            b: 1.0,
            scale_c: 1.0,
            gain_noise_variance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEvidence {
    pub index: usize,
    pub lambda: Vec<f64>,
    pub risk_hat: f64,
    pub n: u64,
    pub p_value: f64,
    pub log_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcbEvidence {
    pub search: UcbResult,
    pub gamma_t: f64,
    pub zeta_prime: f64,
    pub threshold_params: ThresholdParams,
    /// Smallest T giving a positive threshold, reported when it is not.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_rounds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    Grid(Vec<PointEvidence>),
    GpUcb(Box<UcbEvidence>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub p_star: f64,
    pub threshold: f64,
    pub method: Method,
    pub spec: SafetySpec,
    pub evidence: Evidence,
    pub oracle_fingerprint: String,
    pub attack_metadata: Metadata,
    pub n: u64,
}

/// Attack seeds for the oracle calls of a GP-UCB search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UcbSeeding {
    /// The same seed every round.
    Fixed(EvalSeed),
    /// Round `t` uses `Run(derive(base, "ucb-round", t))`.
    PerRound { base: u64 },
}

impl UcbSeeding {
    pub fn for_round(&self, round: usize) -> EvalSeed {
        match *self {
            UcbSeeding::Fixed(s) => s,
            UcbSeeding::PerRound { base } => {
                EvalSeed::Run(seed::derive(base, "ucb-round", round as u64))
            }
        }
    }
}

fn evaluate_point(
    oracle: &dyn RiskOracle,
    grid: &HyperGrid,
    index: usize,
    alpha: f64,
    seed: EvalSeed,
) -> Result<PointEvidence, CertifyError> {
    let lambda = grid.point(index);
    let risk = oracle
        .evaluate(&lambda, seed)
        .map_err(|source| CertifyError::Oracle {
            lambda: lambda.clone(),
            source,
        })?;
    let p = hb_stats::hb_p_value(&risk, alpha)?;
    Ok(PointEvidence {
        index,
        lambda,
        risk_hat: risk.risk_hat(),
        n: risk.n(),
        p_value: p.value,
        log_p_value: p.log_value,
    })
}

/// Exhaustive test: `p* = max_lambda p(lambda)`, certified iff `p* <= zeta`.
///
/// Points are evaluated in parallel when the oracle is concurrency-safe and
/// `jobs` is not `Some(1)`; `None` uses the ambient rayon pool. Results and
/// errors are reported in grid order regardless of scheduling.
pub fn grid_certify(
    oracle: &dyn RiskOracle,
    grid: &HyperGrid,
    spec: &SafetySpec,
    seed: EvalSeed,
    jobs: Option<usize>,
) -> Result<Verdict, CertifyError> {
    spec.validate()?;
    let eval = |i| evaluate_point(oracle, grid, i, spec.alpha, seed);
    let parallel = oracle.descriptor().concurrency_safe && jobs != Some(1) && grid.len() > 1;
    let results: Vec<_> = if !parallel {
        (0..grid.len()).map(eval).collect()
    } else if let Some(k) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CertifyError::Precondition(format!("cannot start {k} workers: {e}")))?
            .install(|| (0..grid.len()).into_par_iter().map(eval).collect())
    } else {
        (0..grid.len()).into_par_iter().map(eval).collect()
    };
    let points = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let p_star = points
        .iter()
        .map(|p| p.p_value)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Verdict {
        decision: Decision::from_test(p_star, spec.zeta),
        p_star,
        threshold: spec.zeta,
        method: Method::Grid,
        spec: *spec,
        evidence: Evidence::Grid(points),
        oracle_fingerprint: oracle.fingerprint(),
        attack_metadata: oracle.descriptor().attack_metadata.clone(),
        n: oracle.descriptor().n,
    })
}

/// GP-UCB test: search the p-value surface for `cfg.rounds` rounds and
/// certify iff the search average `p_hat_T <= zeta'`.
pub fn ucb_certify(
    oracle: &dyn RiskOracle,
    grid: &HyperGrid,
    spec: &SafetySpec,
    cfg: &UcbConfig,
    params: &ThresholdParams,
    seeding: UcbSeeding,
) -> Result<Verdict, CertifyError> {
    spec.validate()?;
    let search = gp_ucb::ucb_run(grid, cfg, |round, _, lambda| {
        let risk = oracle
            .evaluate(lambda, seeding.for_round(round))
            .map_err(|source| CertifyError::Oracle {
                lambda: lambda.to_vec(),
                source,
            })?;
        Ok::<_, CertifyError>(hb_stats::hb_p_value(&risk, spec.alpha)?.value)
    })
    .map_err(|e| match e {
        UcbError::Gp(g) => CertifyError::Gp(g),
        UcbError::Oracle { source, .. } => source,
    })?;

    // Past the grid size the greedy gain is flat, which min_rounds relies on.
    let curve = gp_ucb::info_gain_curve(
        &cfg.kernel,
        grid,
        params.gain_noise_variance,
        cfg.rounds.max(grid.len()),
    )?;
    let gamma_t = curve[cfg.rounds - 1];
    let zeta_prime = gp_ucb::conservative_threshold(
        spec.zeta,
        spec.delta,
        params.b,
        gamma_t,
        cfg.rounds,
        params.scale_c,
    )?;
    let min_rounds = if zeta_prime > 0.0 {
        None
    } else {
        Some(gp_ucb::min_rounds_for_positive_threshold(
            spec.zeta,
            spec.delta,
            params.b,
            params.scale_c,
            &curve,
        )?)
    };
    let p_star = search.p_hat_t;
    Ok(Verdict {
        decision: Decision::from_test(p_star, zeta_prime),
        p_star,
        threshold: zeta_prime,
        method: Method::GpUcb,
        spec: *spec,
        evidence: Evidence::GpUcb(Box::new(UcbEvidence {
            search,
            gamma_t,
            zeta_prime,
            threshold_params: *params,
            min_rounds,
        })),
        oracle_fingerprint: oracle.fingerprint(),
        attack_metadata: oracle.descriptor().attack_metadata.clone(),
        n: oracle.descriptor().n,
    })
}

/// Which test a Type-I simulation exercises.
#[derive(Debug, Clone, PartialEq)]
pub enum SimMethod {
    Grid,
    GpUcb {
        cfg: UcbConfig,
        params: ThresholdParams,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type1Report {
    pub method: Method,
    pub trials: usize,
    /// Trials that (wrongly) certified.
    pub rejections: usize,
    pub indeterminate: usize,
    pub rejection_rate: f64,
    pub stderr: f64,
    pub zeta: f64,
    /// `zeta + 3 * stderr`.
    pub bound: f64,
    pub pass: bool,
    pub max_true_risk: f64,
    pub n: u64,
    pub coupling: Coupling,
}

/// Monte Carlo false-certification rate on a surface whose true maximum
/// risk exceeds `alpha`.
///
/// Trial `i` draws its calibration outcomes with seed
/// `derive(seed, "trial", i)`, so the result does not depend on how trials
/// are scheduled.
#[allow(clippy::too_many_arguments)]
pub fn simulate_type1(
    grid: &HyperGrid,
    surface: &Surface,
    spec: &SafetySpec,
    n: u64,
    trials: usize,
    coupling: Coupling,
    method: &SimMethod,
    seed: u64,
    jobs: Option<usize>,
) -> Result<Type1Report, CertifyError> {
    spec.validate()?;
    if trials == 0 {
        return Err(CertifyError::Precondition(
            "trials must be at least 1".into(),
        ));
    }
    let oracle = AnalyticOracle::new(grid.clone(), surface, n, coupling)?;
    let max_true_risk = oracle.max_risk();
    if max_true_risk <= spec.alpha {
        return Err(CertifyError::Precondition(format!(
            "surface max risk {max_true_risk} does not exceed alpha={}; the model is safe, so there is no Type-I error to measure",
            spec.alpha
        )));
    }
    let trial = |i: usize| -> Result<Decision, CertifyError> {
        let s = seed::derive(seed, "trial", i as u64);
        let v = match method {
            SimMethod::Grid => grid_certify(&oracle, grid, spec, EvalSeed::Run(s), Some(1))?,
            SimMethod::GpUcb { cfg, params } => {
                let cfg = UcbConfig {
                    seed: seed::derive(s, "ucb", 0),
                    ..cfg.clone()
                };
                ucb_certify(
                    &oracle,
                    grid,
                    spec,
                    &cfg,
                    params,
                    UcbSeeding::Fixed(EvalSeed::Run(s)),
                )?
            }
        };
        Ok(v.decision)
    };
    let decisions: Vec<_> = match jobs {
        Some(1) => (0..trials).map(trial).collect(),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CertifyError::Precondition(format!("cannot start {k} workers: {e}")))?
            .install(|| (0..trials).into_par_iter().map(trial).collect()),
        None => (0..trials).into_par_iter().map(trial).collect(),
    };
    let decisions = decisions.into_iter().collect::<Result<Vec<_>, _>>()?;
    let rejections = decisions
        .iter()
        .filter(|d| **d == Decision::CertifiedSafe)
        .count();
    let indeterminate = decisions
        .iter()
        .filter(|d| **d == Decision::Indeterminate)
        .count();
    let rate = rejections as f64 / trials as f64;
    let stderr = (rate * (1.0 - rate) / trials as f64).sqrt();
    let bound = spec.zeta + 3.0 * stderr;
    Ok(Type1Report {
        method: match method {
            SimMethod::Grid => Method::Grid,
            SimMethod::GpUcb { .. } => Method::GpUcb,
        },
        trials,
        rejections,
        indeterminate,
        rejection_rate: rate,
        stderr,
        zeta: spec.zeta,
        bound,
        pass: rate <= bound,
        max_true_risk,
        n,
        coupling,
    })
}

/// One GP-UCB round as reported by [`compare_methods`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    pub index: usize,
    pub lambda: Vec<f64>,
    /// `p_hat_t` fed to the GP.
    pub observed: f64,
    /// Running average `(1/t) sum_{s<=t} p_hat_s`.
    pub cumulative: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub grid: Verdict,
    pub ucb: Verdict,
    pub trace: Vec<TraceRow>,
}

impl Comparison {
    pub fn grid_p_star(&self) -> f64 {
        self.grid.p_star
    }

    pub fn ucb_result(&self) -> &UcbResult {
        match &self.ucb.evidence {
            Evidence::GpUcb(e) => &e.search,
            Evidence::Grid(_) => unreachable!("ucb verdict carries GP-UCB evidence"),
        }
    }
}

/// Run both tests on one oracle and line up the GP-UCB trace against the
/// exhaustive `p*`.
#[allow(clippy::too_many_arguments)]
pub fn compare_methods(
    oracle: &dyn RiskOracle,
    grid: &HyperGrid,
    spec: &SafetySpec,
    cfg: &UcbConfig,
    params: &ThresholdParams,
    grid_seed: EvalSeed,
    ucb_seeding: UcbSeeding,
    jobs: Option<usize>,
) -> Result<Comparison, CertifyError> {
    let grid_verdict = grid_certify(oracle, grid, spec, grid_seed, jobs)?;
    let ucb = ucb_certify(oracle, grid, spec, cfg, params, ucb_seeding)?;
    let Evidence::GpUcb(ev) = &ucb.evidence else {
        unreachable!("ucb_certify returns GP-UCB evidence")
    };
    let mut sum = 0.0;
    let trace = ev
        .search
        .trajectory
        .iter()
        .map(|s| {
            sum += s.observed;
            TraceRow {
                round: s.round,
                index: s.index,
                lambda: s.lambda.clone(),
                observed: s.observed,
                cumulative: sum / s.round as f64,
                mean: s.mean,
                std: s.std,
            }
        })
        .collect();
    Ok(Comparison {
        grid: grid_verdict,
        ucb,
        trace,
    })
}
