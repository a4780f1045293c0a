//! Hoeffding-Bentkus p-values for the empirical adversarial risk.
//!
//! For an empirical risk `r` measured on `n` calibration samples and a null
//! threshold `alpha`, the p-value is
//!
//! ```text
//! p = min{ exp(-n * h1(r, alpha)), e * P(Bin(n, alpha) <= ceil(n * r)), 1 }
//! ```
//!
//! with `h1(a, b) = a log(a/b) + (1-a) log((1-a)/(1-b))`. The Hoeffding
//! factor is one-sided: it is taken as 1 whenever `r >= alpha`.
//!
//! Everything is computed in log space. The binomial CDF sums Loader's
//! saddle-point PMF terms outward from the largest term, so deep tails such
//! as `0.9^1000` keep full relative precision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("h1 requires a in [0,1) and b in (0,1), got a={a}, b={b}")]
    H1Domain { a: f64, b: f64 },
    #[error("alpha must lie in (0,1), got {0}")]
    Alpha(f64),
    #[error("binomial tail index k={k} outside 0..={n}")]
    TailDomain { k: u64, n: u64 },
    #[error("calibration size n must be at least 1")]
    EmptyCalibration,
    #[error("empirical risk {0} outside [0,1]")]
    RiskRange(f64),
    #[error("indicator length mismatch: {correct} model-correct vs {fooled} attack-fooled")]
    LengthMismatch { correct: usize, fooled: usize },
    #[error("per-sample indicators count {count}/{n} but risk_hat is {risk_hat}")]
    IndicatorMismatch { risk_hat: f64, count: u64, n: u64 },
}

/// Smallest value a p-value is allowed to take.
pub const P_VALUE_FLOOR: f64 = f64::MIN_POSITIVE;

/// Empirical adversarial risk of one attack configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RiskRepr", into = "RiskRepr")]
pub struct RiskEstimate {
    risk_hat: f64,
    n: u64,
    lambda: Vec<f64>,
    per_sample: Option<Vec<(bool, bool)>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RiskRepr {
    risk_hat: f64,
    n: u64,
    lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    per_sample: Option<Vec<(bool, bool)>>,
}

impl TryFrom<RiskRepr> for RiskEstimate {
    type Error = StatsError;

    fn try_from(r: RiskRepr) -> Result<Self, StatsError> {
        match r.per_sample {
            Some(pairs) => {
                let est = RiskEstimate::from_pairs(&pairs, r.lambda)?;
                if est.risk_hat != r.risk_hat {
                    return Err(StatsError::IndicatorMismatch {
                        risk_hat: r.risk_hat,
                        count: est.count().unwrap_or(0),
                        n: est.n,
                    });
                }
                Ok(est)
            }
            None => RiskEstimate::new(r.risk_hat, r.n, r.lambda),
        }
    }
}

impl From<RiskEstimate> for RiskRepr {
    fn from(r: RiskEstimate) -> Self {
        RiskRepr {
            risk_hat: r.risk_hat,
            n: r.n,
            lambda: r.lambda,
            per_sample: r.per_sample,
        }
    }
}

impl RiskEstimate {
    /// A scalar estimate without per-sample indicators.
    pub fn new(risk_hat: f64, n: u64, lambda: Vec<f64>) -> Result<Self, StatsError> {
        if n == 0 {
            return Err(StatsError::EmptyCalibration);
        }
        if !(0.0..=1.0).contains(&risk_hat) {
            return Err(StatsError::RiskRange(risk_hat));
        }
        Ok(Self {
            risk_hat,
            n,
            lambda,
            per_sample: None,
        })
    }

    fn from_pairs(pairs: &[(bool, bool)], lambda: Vec<f64>) -> Result<Self, StatsError> {
        if pairs.is_empty() {
            return Err(StatsError::EmptyCalibration);
        }
        let n = pairs.len() as u64;
        let count = pairs.iter().filter(|(c, f)| *c && *f).count() as u64;
        Ok(Self {
            risk_hat: count as f64 / n as f64,
            n,
            lambda,
            per_sample: Some(pairs.to_vec()),
        })
    }

    pub fn risk_hat(&self) -> f64 {
        self.risk_hat
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// `(model-correct, attack-fooled)` pairs, when retained.
    pub fn per_sample(&self) -> Option<&[(bool, bool)]> {
        self.per_sample.as_deref()
    }

    /// Number of counted samples, when per-sample indicators are present.
    pub fn count(&self) -> Option<u64> {
        self.per_sample
            .as_ref()
            .map(|p| p.iter().filter(|(c, f)| *c && *f).count() as u64)
    }

    /// Drop the per-sample payload, keeping the scalar.
    pub fn without_indicators(mut self) -> Self {
        self.per_sample = None;
        self
    }
}

/// A p-value together with the threshold it tests against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub value: f64,
    /// Natural log of the unclamped p-value.
    pub log_value: f64,
    pub alpha: f64,
    pub source_risk: RiskEstimate,
}

/// Bernoulli KL divergence `h1(a, b)`.
pub fn h1(a: f64, b: f64) -> Result<f64, StatsError> {
    if !(0.0..1.0).contains(&a) || !(b > 0.0 && b < 1.0) {
        return Err(StatsError::H1Domain { a, b });
    }
    if a == 0.0 {
        return Ok(-(-b).ln_1p());
    }
    let d = a - b;
    Ok(a * (d / b).ln_1p() + (1.0 - a) * (-d / (1.0 - b)).ln_1p())
}

fn check_alpha(alpha: f64) -> Result<(), StatsError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(StatsError::Alpha(alpha))
    }
}

/// `P(Bin(n, alpha) <= k)`.
pub fn binom_tail(k: u64, n: u64, alpha: f64) -> Result<f64, StatsError> {
    Ok(ln_binom_tail(k, n, alpha)?.exp())
}

/// `ln P(Bin(n, alpha) <= k)`; finite even where the CDF underflows `f64`.
pub fn ln_binom_tail(k: u64, n: u64, alpha: f64) -> Result<f64, StatsError> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(StatsError::EmptyCalibration);
    }
    if k > n {
        return Err(StatsError::TailDomain { k, n });
    }
    if k == n {
        return Ok(0.0);
    }
    let q = 1.0 - alpha;
    let mode = (((n + 1) as f64 * alpha).floor() as u64).min(n);
    let top = k.min(mode);
    let l_top = ln_dbinom(top, n, alpha, q);

    // Terms shrink monotonically away from `top` on both sides.
    let mut acc = Neumaier::default();
    acc.add(1.0);
    for j in (0..top).rev() {
        let w = (ln_dbinom(j, n, alpha, q) - l_top).exp();
        acc.add(w);
        if w < acc.sum() * 1e-20 {
            break;
        }
    }
    for j in top + 1..=k {
        let w = (ln_dbinom(j, n, alpha, q) - l_top).exp();
        acc.add(w);
        if w < acc.sum() * 1e-20 {
            break;
        }
    }
    Ok((l_top + acc.sum().ln()).min(0.0))
}

/// `ceil(n * risk)` that treats values within rounding of an integer as that
/// integer, so that `k/n` maps back to `k`.
pub fn lattice_ceil(n: u64, risk: f64) -> u64 {
    let x = n as f64 * risk;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r
    } else {
        x.ceil()
    };
    (k.max(0.0) as u64).min(n)
}

/// Natural log of the Hoeffding-Bentkus p-value, before clamping.
pub fn ln_hb_p_value(risk_hat: f64, n: u64, alpha: f64) -> Result<f64, StatsError> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(StatsError::EmptyCalibration);
    }
    if !(0.0..=1.0).contains(&risk_hat) {
        return Err(StatsError::RiskRange(risk_hat));
    }
    let ln_hoeffding = if risk_hat < alpha {
        -(n as f64) * h1(risk_hat, alpha)?
    } else {
        0.0
    };
    let ln_bentkus = 1.0 + ln_binom_tail(lattice_ceil(n, risk_hat), n, alpha)?;
    Ok(ln_hoeffding.min(ln_bentkus).min(0.0))
}

/// Scalar form of [`hb_p_value`].
pub fn p_value(risk_hat: f64, n: u64, alpha: f64) -> Result<f64, StatsError> {
    Ok(ln_hb_p_value(risk_hat, n, alpha)?.exp().max(P_VALUE_FLOOR))
}

pub fn hb_p_value(risk: &RiskEstimate, alpha: f64) -> Result<PValue, StatsError> {
    let log_value = ln_hb_p_value(risk.risk_hat, risk.n, alpha)?;
    Ok(PValue {
        value: log_value.exp().max(P_VALUE_FLOOR),
        log_value,
        alpha,
        source_risk: risk.clone(),
    })
}

/// Empirical adversarial risk: the fraction of samples the clean model gets
/// right and the attack then flips.
pub fn empirical_risk(
    correct: &[bool],
    fooled: &[bool],
    lambda: Vec<f64>,
) -> Result<RiskEstimate, StatsError> {
    if correct.len() != fooled.len() {
        return Err(StatsError::LengthMismatch {
            correct: correct.len(),
            fooled: fooled.len(),
        });
    }
    let pairs: Vec<(bool, bool)> = correct
        .iter()
        .copied()
        .zip(fooled.iter().copied())
        .collect();
    RiskEstimate::from_pairs(&pairs, lambda)
}

#[derive(Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

// ln(n!) - (n + 1/2) ln n + n - ln sqrt(2 pi) for n = 0..=15.
#[allow(clippy::excessive_precision)]
const STIRLERR: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_258_22,
    0.041_340_695_955_409_294_09,
    0.027_677_925_684_998_339_15,
    0.020_790_672_103_765_093_11,
    0.016_644_691_189_821_192_16,
    0.013_876_128_823_070_747_99,
    0.011_896_709_945_891_770_09,
    0.010_411_265_261_972_096_50,
    0.009_255_462_182_712_732_918,
    0.008_330_563_433_362_871_256,
    0.007_573_675_487_951_840_795,
    0.006_942_840_107_209_529_866,
    0.006_408_994_188_004_207_068,
    0.005_951_370_112_758_847_736,
    0.005_554_733_551_962_801_371,
];

fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        return STIRLERR[n as usize];
    }
    let x = n as f64;
    let nn = x * x;
    if n > 500 {
        (S0 - S1 / nn) / x
    } else if n > 80 {
        (S0 - (S1 - S2 / nn) / nn) / x
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / x
    }
}

/// Deviance term `x ln(x/np) + np - x`, evaluated by series when `x ~ np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        if s.abs() < f64::MIN_POSITIVE {
            return s;
        }
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / f64::from(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
    }
    x * (x / np).ln() + np - x
}

/// Loader's saddle-point `ln P(Bin(n, p) = x)`.
fn ln_dbinom(x: u64, n: u64, p: f64, q: f64) -> f64 {
    let nf = n as f64;
    if x == 0 {
        return if p > q {
            nf * q.ln()
        } else {
            nf * (-p).ln_1p()
        };
    }
    if x == n {
        return if p > q {
            nf * (-q).ln_1p()
        } else {
            nf * p.ln()
        };
    }
    let xf = x as f64;
    let lc = stirlerr(n) - stirlerr(x) - stirlerr(n - x) - bd0(xf, nf * p) - bd0(nf - xf, nf * q);
    let lf = LN_2PI + xf.ln() + (-xf / nf).ln_1p();
    lc - 0.5 * lf
}
