use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use super::{EvalSeed, OracleDescriptor, OracleError, RiskOracle};
use crate::hb_stats::RiskEstimate;

type Key = (Vec<u64>, EvalSeed);

/// Memoizes successful evaluations on `(lambda, seed)`.
#[derive(Debug)]
pub struct CachedOracle<O> {
    inner: O,
    entries: RwLock<HashMap<Key, RiskEstimate>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<O: RiskOracle> CachedOracle<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            entries: RwLock::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Number of evaluations forwarded to the wrapped oracle.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<O: RiskOracle> RiskOracle for CachedOracle<O> {
    fn descriptor(&self) -> &OracleDescriptor {
        self.inner.descriptor()
    }

    fn evaluate(&self, lambda: &[f64], seed: EvalSeed) -> Result<RiskEstimate, OracleError> {
        let key = (lambda.iter().map(|v| (v + 0.0).to_bits()).collect(), seed);
        if let Some(hit) = self.entries.read().expect("cache lock poisoned").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let value = self.inner.evaluate(lambda, seed)?;
        self.entries
            .write()
            .expect("cache lock poisoned")
            .entry(key)
            .or_insert_with(|| value.clone());
        Ok(value)
    }

    fn fingerprint_material(&self) -> serde_json::Value {
        self.inner.fingerprint_material()
    }
}
