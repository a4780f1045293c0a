//! Statistical safety certification of classifiers against adversarial
//! attacks.
//!
//! A model is certified when the combined Hoeffding-Bentkus p-value over
//! every attack configuration is at most the rejection level, which keeps
//! the probability of wrongly certifying an unsafe model below that level.

pub mod certifier;
pub mod gp_ucb;
pub mod grid;
pub mod hb_stats;
pub mod oracle;
pub mod seed;

pub use certifier::{
    compare_methods, grid_certify, simulate_type1, ucb_certify, CertifyError, Comparison, Decision,
    Evidence, Method, PointEvidence, SafetySpec, SimMethod, ThresholdParams, TraceRow, Type1Report,
    UcbEvidence, UcbSeeding, Verdict,
};
pub use gp_ucb::{GpError, GpState, KernelConfig, UcbConfig, UcbResult, UcbStep, VisitOrder};
pub use grid::{Axis, GridError, HyperGrid};
pub use hb_stats::{hb_p_value, PValue, RiskEstimate, StatsError};
pub use oracle::{
    load_table, AnalyticOracle, CachedOracle, Coupling, EvalSeed, Metadata, OracleDescriptor,
    OracleError, OracleKind, RiskOracle, RiskTable, SubprocessOracle, Surface, TableError,
    TableFormat, TableOracle,
};
