use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EvalSeed, Metadata, OracleDescriptor, OracleError, OracleKind, RiskOracle};
use crate::grid::HyperGrid;
use crate::hb_stats::RiskEstimate;
use crate::seed;

/// How synthetic calibration outcomes are shared across grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// One set of uniforms `U_1..U_n` per seed, reused at every `lambda`;
    /// sample `i` counts iff `U_i < risk(lambda)`. Like attacking one fixed
    /// calibration set under every configuration.
    #[default]
    Shared,
    /// Fresh draws per `(seed, grid index)`.
    Independent,
}

/// True adversarial risk as a function of the grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Surface {
    Constant {
        risk: f64,
    },
    /// One risk per grid point, in grid order.
    Values {
        risks: Vec<f64>,
    },
    /// `base + (peak - base) * exp(-|x - center|^2 / (2 width^2))` over
    /// normalized grid coordinates.
    Bump {
        base: f64,
        peak: f64,
        center: Vec<f64>,
        width: f64,
    },
}

impl Surface {
    pub fn risks(&self, grid: &HyperGrid) -> Result<Vec<f64>, OracleError> {
        let risks = match self {
            Surface::Constant { risk } => vec![*risk; grid.len()],
            Surface::Values { risks } => {
                if risks.len() != grid.len() {
                    return Err(OracleError::Config(format!(
                        "surface lists {} risks for a grid of {} points",
                        risks.len(),
                        grid.len()
                    )));
                }
                risks.clone()
            }
            Surface::Bump {
                base,
                peak,
                center,
                width,
            } => {
                if center.len() != grid.dim() {
                    return Err(OracleError::Config(format!(
                        "bump center has {} coordinates, grid has {} axes",
                        center.len(),
                        grid.dim()
                    )));
                }
                if width.is_nan() || *width <= 0.0 {
                    return Err(OracleError::Config(format!(
                        "bump width must be positive, got {width}"
                    )));
                }
                (0..grid.len())
                    .map(|i| {
                        let d2: f64 = grid
                            .normalized(i)
                            .iter()
                            .zip(center)
                            .map(|(x, c)| (x - c).powi(2))
                            .sum();
                        base + (peak - base) * (-d2 / (2.0 * width * width)).exp()
                    })
                    .collect()
            }
        };
        if let Some(r) = risks.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(OracleError::Config(format!(
                "surface risk {r} outside [0,1]"
            )));
        }
        Ok(risks)
    }
}

/// Synthetic oracle: `n` Bernoulli outcomes with a known true risk per point.
#[derive(Debug, Clone)]
pub struct AnalyticOracle {
    grid: HyperGrid,
    risks: Vec<f64>,
    coupling: Coupling,
    descriptor: OracleDescriptor,
}

impl AnalyticOracle {
    pub fn new(
        grid: HyperGrid,
        surface: &Surface,
        n: u64,
        coupling: Coupling,
    ) -> Result<Self, OracleError> {
        if n == 0 {
            return Err(OracleError::Config("n must be at least 1".into()));
        }
        let risks = surface.risks(&grid)?;
        Ok(Self {
            grid,
            risks,
            coupling,
            descriptor: OracleDescriptor {
                kind: OracleKind::Analytic,
                attack_metadata: Metadata::new(),
                concurrency_safe: true,
                n,
            },
        })
    }

    pub fn with_metadata(mut self, metadata: Metadata) -> Self {
        self.descriptor.attack_metadata = metadata;
        self
    }

    pub fn grid(&self) -> &HyperGrid {
        &self.grid
    }

    pub fn true_risks(&self) -> &[f64] {
        &self.risks
    }

    pub fn max_risk(&self) -> f64 {
        self.risks.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }
}

impl RiskOracle for AnalyticOracle {
    fn descriptor(&self) -> &OracleDescriptor {
        &self.descriptor
    }

    fn evaluate(&self, lambda: &[f64], seed: EvalSeed) -> Result<RiskEstimate, OracleError> {
        let index = self
            .grid
            .index_of(lambda)
            .ok_or_else(|| OracleError::UnknownLambda(lambda.to_vec()))?;
        let EvalSeed::Run(s) = seed else {
            return Err(OracleError::AverageUnsupported("analytic"));
        };
        let mut rng = match self.coupling {
            Coupling::Shared => seed::rng(s, "analytic-shared", 0),
            Coupling::Independent => seed::rng(s, "analytic-point", index as u64),
        };
        let r = self.risks[index];
        let n = self.descriptor.n;
        let count = (0..n).filter(|_| rng.random::<f64>() < r).count() as u64;
        Ok(RiskEstimate::new(
            count as f64 / n as f64,
            n,
            lambda.to_vec(),
        )?)
    }

    fn fingerprint_material(&self) -> serde_json::Value {
        serde_json::json!({
            "grid": self.grid,
            "risks": self.risks,
            "coupling": self.coupling,
        })
    }
}
