//! The run configuration: one strictly validated JSON document.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::ValueEnum;
use prosac_core::gp_ucb::{KernelConfig, VisitOrder};
use prosac_core::{
    Coupling, HyperGrid, Metadata, SafetySpec, Surface, TableFormat, ThresholdParams,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const TIMEOUT_ENV: &str = "PROSAC_RUNNER_TIMEOUT_SECS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MethodChoice {
    #[default]
    Grid,
    GpUcb,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSource {
    Analytic {
        n: u64,
        surface: Surface,
        #[serde(default)]
        coupling: Coupling,
    },
    Table {
        path: PathBuf,
        /// Inferred from the extension when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        format: Option<TableFormat>,
    },
    Subprocess {
        command: Vec<String>,
        #[serde(default)]
        per_sample: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub source: OracleSource,
    #[serde(default, skip_serializing_if = "Metadata::is_empty")]
    pub metadata: Metadata,
}

/// GP-UCB settings. Unset noise levels are chosen from the oracle: zero for
/// deterministic sources, the pooled run-to-run p-value spread for
/// multi-run tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UcbSection {
    pub beta: f64,
    pub rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_noise_std: Option<f64>,
    pub kernel: KernelConfig,
    pub visit_order: VisitOrder,
}

impl Default for UcbSection {
    fn default() -> Self {
        Self {
            beta: 0.1,
            rounds: 100,
            noise_std: None,
            model_noise_std: None,
            kernel: KernelConfig::default(),
            visit_order: VisitOrder::Ucb,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanPoint {
    pub value: f64,
    pub oracle: OracleSource,
}

/// A sweep over a parameter of the oracle source: either `values`, each
/// substituted for `{value}` in `template` (default: the configured oracle
/// source), or explicit `points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub axis: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<ScanPoint>,
    /// Oracle source JSON that may hold `"{value}"` where a number belongs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub trials: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodChoice>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            trials: 2000,
            method: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub spec: SafetySpec,
    /// Required except for table oracles, whose grid comes from the table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<HyperGrid>,
    pub oracle: OracleConfig,
    #[serde(default)]
    pub method: MethodChoice,
    #[serde(default)]
    pub ucb: UcbSection,
    #[serde(default)]
    pub threshold: ThresholdParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    /// Directory that relative table paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.spec
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if self.jobs == Some(0) {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        if self.ucb.rounds == 0 {
            return Err(CliError::Usage("ucb.rounds must be at least 1".into()));
        }
        Ok(())
    }

    /// The config as embedded in reports: settings that cannot change
    /// results (`jobs`, the output path) are dropped so reruns compare equal.
    pub fn for_report(&self) -> Self {
        let mut c = self.clone();
        c.jobs = None;
        c.output.path = None;
        c
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

/// Effective subprocess timeout: environment, then config, then default.
pub fn runner_timeout(config_secs: Option<f64>) -> Result<Duration, CliError> {
    let parse = |what: &str, s: f64| {
        Duration::try_from_secs_f64(s)
            .ok()
            .filter(|d| !d.is_zero())
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "{what} must be a positive number of seconds, got {s}"
                ))
            })
    };
    if let Ok(text) = std::env::var(TIMEOUT_ENV) {
        let secs: f64 = text
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{TIMEOUT_ENV}=`{text}` is not a number")))?;
        return parse(TIMEOUT_ENV, secs);
    }
    match config_secs {
        Some(s) => parse("timeout_secs", s),
        None => Ok(prosac_core::oracle::DEFAULT_TIMEOUT),
    }
}

fn substitute(v: &mut Value, value: f64, text: &str, as_number: bool) {
    match v {
        Value::String(s) if as_number && s == "{value}" => *v = serde_json::json!(value),
        Value::String(s) if s.contains("{value}") => *s = s.replace("{value}", text),
        Value::Array(items) => items
            .iter_mut()
            .for_each(|x| substitute(x, value, text, as_number)),
        Value::Object(map) => map
            .values_mut()
            .for_each(|x| substitute(x, value, text, as_number)),
        _ => {}
    }
}

/// Replace `"{value}"` strings in `template` by the number `value`, and
/// `{value}` inside longer strings by its decimal text. When numbers do not
/// fit the schema (e.g. a runner argument list), text is used throughout.
pub fn instantiate(template: &Value, value: f64) -> Result<OracleSource, CliError> {
    let text = crate::output::num(value);
    let attempt = |as_number| {
        let mut v = template.clone();
        substitute(&mut v, value, &text, as_number);
        serde_json::from_value::<OracleSource>(v)
    };
    attempt(true)
        .or_else(|_| attempt(false))
        .map_err(|e| CliError::Usage(format!("scan value {value} gives an invalid oracle: {e}")))
}
