//! Risk oracles: maps from an attack configuration `lambda` and a seed to an
//! empirical adversarial risk.
//!
//! The seed stands for the attack's internal randomness. Oracles are pure
//! functions of `(configuration, lambda, seed)`.

mod analytic;
mod cache;
mod subprocess;
mod table;

use std::collections::BTreeMap;
use std::io;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hb_stats::{RiskEstimate, StatsError};

pub use analytic::{AnalyticOracle, Coupling, Surface};
pub use cache::CachedOracle;
pub use subprocess::{SubprocessOracle, DEFAULT_TIMEOUT, PROTOCOL};
pub use table::{load_table, RiskTable, TableError, TableFormat, TableOracle};

/// Free-form attack description (name, budget, norm, model id, ...).
pub type Metadata = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Analytic,
    Table,
    Subprocess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDescriptor {
    pub kind: OracleKind,
    pub attack_metadata: Metadata,
    pub concurrency_safe: bool,
    pub n: u64,
}

/// Which realization of the attack randomness to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSeed {
    Run(u64),
    /// The average over all stored runs (tables only).
    Average,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("lambda {0:?} is not a point of the oracle's grid")]
    UnknownLambda(Vec<f64>),
    #[error("{0} oracle has no run-averaged estimate")]
    AverageUnsupported(&'static str),
    #[error("invalid oracle configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("failed to start runner `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("invalid runner handshake: {0}")]
    Handshake(String),
    #[error("malformed runner response ({reason}): `{}`", .bytes.escape_ascii())]
    Malformed { reason: String, bytes: Vec<u8> },
    #[error("runner reported n={got} but its handshake declared n={expected}")]
    NDrift { expected: u64, got: u64 },
    #[error("runner gave no response within {0:?}")]
    Timeout(Duration),
    #[error("runner exited unexpectedly ({status})")]
    ChildExited { status: String },
    #[error("runner failed request {id}: {message}")]
    Runner { id: u64, message: String },
    #[error("response id {got} does not match request id {expected}")]
    IdMismatch { expected: u64, got: u64 },
    #[error("runner risk {risk} is not a multiple of 1/{n}")]
    Lattice { risk: f64, n: u64 },
    #[error("runner I/O failed: {0}")]
    Io(#[from] io::Error),
}

/// A black-box map `(lambda, seed) -> RiskEstimate`.
pub trait RiskOracle: Send + Sync {
    fn descriptor(&self) -> &OracleDescriptor;

    fn evaluate(&self, lambda: &[f64], seed: EvalSeed) -> Result<RiskEstimate, OracleError>;

    /// Everything beyond the descriptor that determines the oracle's output.
    fn fingerprint_material(&self) -> serde_json::Value;

    /// SHA-256 of the canonical JSON of descriptor and material.
    fn fingerprint(&self) -> String {
        let doc = serde_json::json!({
            "descriptor": self.descriptor(),
            "material": self.fingerprint_material(),
        });
        let bytes = serde_json::to_vec(&doc).expect("oracle fingerprint serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

impl<T: RiskOracle + ?Sized> RiskOracle for Box<T> {
    fn descriptor(&self) -> &OracleDescriptor {
        (**self).descriptor()
    }

    fn evaluate(&self, lambda: &[f64], seed: EvalSeed) -> Result<RiskEstimate, OracleError> {
        (**self).evaluate(lambda, seed)
    }

    fn fingerprint_material(&self) -> serde_json::Value {
        (**self).fingerprint_material()
    }
}

/// `k` with `|risk - k/n| <= 1e-12`, if any.
pub(crate) fn lattice_count(risk: f64, n: u64) -> Option<u64> {
    if !(0.0..=1.0).contains(&risk) {
        return None;
    }
    let k = (risk * n as f64).round();
    ((risk - k / n as f64).abs() <= 1e-12).then_some(k as u64)
}
