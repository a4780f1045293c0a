//! `certify`, `scan`, `simulate` and `compare`.
//!
//! Seeds: every random choice derives from the top-level `seed`.
//!
//! * table oracles: the exhaustive test reads the run average; GP-UCB round
//!   `t` reads run `derive(seed, "ucb-round", t) mod R`;
//! * other oracles: both tests use attack seed `derive(seed, "oracle", 0)`;
//! * GP-UCB observation noise: `derive(seed, "ucb-noise", 0)`;
//! * simulation trial `i`: `derive(seed, "trial", i)`.

use std::fs;
use std::path::{Path, PathBuf};

use prosac_core::oracle::SubprocessOracle;
use prosac_core::{
    compare_methods, grid_certify, seed, simulate_type1, ucb_certify, AnalyticOracle, CachedOracle,
    Decision, EvalSeed, Evidence, HyperGrid, Method, RiskOracle, SimMethod, TableFormat,
    TableOracle, Type1Report, UcbConfig, UcbSeeding, Verdict,
};
use serde::Serialize;

use crate::config::{
    instantiate, runner_timeout, MethodChoice, OracleSource, OutputFormat, RunConfig,
};
use crate::output::{csv_bytes, emit, json_bytes, num};
use crate::{combine, exit_code, CliError, EXIT_CERTIFIED, EXIT_NOT_CERTIFIED};

/// An instantiated oracle and the grid it is searched over.
pub struct Built {
    pub oracle: Box<dyn RiskOracle>,
    pub grid: HyperGrid,
    pub is_table: bool,
    /// Pooled run-to-run p-value spread of a multi-run table.
    pub table_noise: Option<f64>,
}

fn need_grid(cfg: &RunConfig, kind: &str) -> Result<HyperGrid, CliError> {
    cfg.grid
        .clone()
        .ok_or_else(|| CliError::Usage(format!("a {kind} oracle needs a `grid` in the config")))
}

pub fn build_oracle(cfg: &RunConfig, source: &OracleSource) -> Result<Built, CliError> {
    let metadata = cfg.oracle.metadata.clone();
    match source {
        OracleSource::Analytic {
            n,
            surface,
            coupling,
        } => {
            let grid = need_grid(cfg, "analytic")?;
            let oracle =
                AnalyticOracle::new(grid.clone(), surface, *n, *coupling)?.with_metadata(metadata);
            Ok(Built {
                oracle: Box::new(oracle),
                grid,
                is_table: false,
                table_noise: None,
            })
        }
        OracleSource::Table { path, format } => {
            let path = cfg.resolve(path);
            let format = format
                .or_else(|| TableFormat::from_path(&path))
                .ok_or_else(|| {
                    CliError::Usage(format!(
                        "cannot tell the format of `{}`; set `format`",
                        path.display()
                    ))
                })?;
            let table = prosac_core::load_table(&path, format)?;
            if let Some(g) = &cfg.grid {
                if g != table.grid() {
                    return Err(CliError::Usage(format!(
                        "config grid differs from the grid of `{}`",
                        path.display()
                    )));
                }
            }
            let noise = table
                .pooled_p_value_std(cfg.spec.alpha)
                .map_err(|e| CliError::Oracle(e.into()))?;
            let multi = table.run_count() > 1;
            let grid = table.grid().clone();
            Ok(Built {
                oracle: Box::new(TableOracle::new(table).with_metadata(metadata)),
                grid,
                is_table: true,
                table_noise: multi.then_some(noise),
            })
        }
        OracleSource::Subprocess {
            command,
            per_sample,
            timeout_secs,
        } => {
            let grid = need_grid(cfg, "subprocess")?;
            let timeout = runner_timeout(*timeout_secs)?;
            let oracle = SubprocessOracle::spawn(command, Some(grid.clone()), timeout)?
                .with_per_sample(*per_sample);
            Ok(Built {
                oracle: Box::new(CachedOracle::new(oracle)),
                grid,
                is_table: false,
                table_noise: None,
            })
        }
    }
}

/// Seeds and GP-UCB settings actually used, recorded next to the verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub grid_seed: EvalSeed,
    pub ucb_seeding: UcbSeeding,
    pub ucb: UcbConfig,
}

pub fn resolve(cfg: &RunConfig, built: &Built) -> Resolved {
    let (grid_seed, ucb_seeding) = if built.is_table {
        (EvalSeed::Average, UcbSeeding::PerRound { base: cfg.seed })
    } else {
        let s = EvalSeed::Run(seed::derive(cfg.seed, "oracle", 0));
        (s, UcbSeeding::Fixed(s))
    };
    let u = &cfg.ucb;
    let model_noise_std = match (u.model_noise_std, u.noise_std) {
        (Some(m), _) => Some(m),
        (None, None) => built.table_noise,
        (None, Some(_)) => None,
    };
    Resolved {
        grid_seed,
        ucb_seeding,
        ucb: UcbConfig {
            beta: u.beta,
            rounds: u.rounds,
            noise_std: u.noise_std.unwrap_or(0.0),
            model_noise_std,
            seed: seed::derive(cfg.seed, "ucb-noise", 0),
            kernel: u.kernel.clone(),
            visit_order: u.visit_order,
        },
    }
}

fn methods(choice: MethodChoice) -> &'static [Method] {
    match choice {
        MethodChoice::Grid => &[Method::Grid],
        MethodChoice::GpUcb => &[Method::GpUcb],
        MethodChoice::Both => &[Method::Grid, Method::GpUcb],
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Grid => "grid",
        Method::GpUcb => "gp_ucb",
    }
}

fn decision_name(d: Decision) -> &'static str {
    match d {
        Decision::CertifiedSafe => "certified_safe",
        Decision::NotCertified => "not_certified",
        Decision::Indeterminate => "indeterminate",
    }
}

fn run_methods(
    cfg: &RunConfig,
    built: &Built,
    resolved: &Resolved,
) -> Result<Vec<Verdict>, CliError> {
    methods(cfg.method)
        .iter()
        .map(|m| {
            Ok(match m {
                Method::Grid => grid_certify(
                    &*built.oracle,
                    &built.grid,
                    &cfg.spec,
                    resolved.grid_seed,
                    cfg.jobs,
                )?,
                Method::GpUcb => ucb_certify(
                    &*built.oracle,
                    &built.grid,
                    &cfg.spec,
                    &resolved.ucb,
                    &cfg.threshold,
                    resolved.ucb_seeding,
                )?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct CertifyReport<'a> {
    decision: Decision,
    config: &'a RunConfig,
    resolved: &'a Resolved,
    verdicts: &'a [Verdict],
}

/// Run the configured test(s); the exit code reflects the combined decision.
pub fn certify(cfg: &RunConfig) -> Result<i32, CliError> {
    cfg.validate()?;
    let shown = cfg.for_report();
    let built = build_oracle(cfg, &cfg.oracle.source)?;
    let resolved = resolve(cfg, &built);
    let verdicts = run_methods(cfg, &built, &resolved)?;
    let decision = combine(verdicts.iter().map(|v| v.decision));
    let bytes = match cfg.output.format {
        OutputFormat::Json => json_bytes(&CertifyReport {
            decision,
            config: &shown,
            resolved: &resolved,
            verdicts: &verdicts,
        }),
        OutputFormat::Csv => {
            let header = ["method", "p_star", "threshold", "decision"].map(String::from);
            let rows: Vec<Vec<String>> = verdicts
                .iter()
                .map(|v| {
                    vec![
                        method_name(v.method).into(),
                        num(v.p_star),
                        num(v.threshold),
                        decision_name(v.decision).into(),
                    ]
                })
                .collect();
            csv_bytes(&header, &rows)
        }
    };
    emit(cfg.output.path.as_deref(), &bytes)?;
    Ok(exit_code(decision))
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub value: f64,
    pub method: Method,
    pub p_star: Option<f64>,
    pub threshold: Option<f64>,
    pub decision: Option<Decision>,
    pub error: Option<String>,
}

#[derive(Serialize)]
struct ScanReport<'a> {
    config: &'a RunConfig,
    axis: &'a str,
    rows: &'a [ScanRow],
}

/// One certification per sweep value. Failures are recorded in their row
/// and the scan continues.
pub fn scan(cfg: &RunConfig) -> Result<i32, CliError> {
    cfg.validate()?;
    let shown = cfg.for_report();
    let sc = cfg
        .scan
        .as_ref()
        .ok_or_else(|| CliError::Usage("scan needs a `scan` section or --axis/--values".into()))?;
    let mut sources: Vec<(f64, Result<OracleSource, CliError>)> = if !sc.points.is_empty() {
        sc.points
            .iter()
            .map(|p| (p.value, Ok(p.oracle.clone())))
            .collect()
    } else {
        let template = match &sc.template {
            Some(t) => t.clone(),
            None => serde_json::to_value(&cfg.oracle.source).expect("oracle source serializes"),
        };
        sc.values
            .iter()
            .map(|&v| (v, instantiate(&template, v)))
            .collect()
    };
    if sources.is_empty() {
        return Err(CliError::Usage("the sweep has no values".into()));
    }
    if let Some((v, _)) = sources.iter().find(|(v, _)| !v.is_finite()) {
        return Err(CliError::Usage(format!("sweep value {v} is not finite")));
    }
    sources.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rows = Vec::new();
    for (value, source) in sources {
        let outcome = source.and_then(|s| {
            let built = build_oracle(cfg, &s)?;
            let resolved = resolve(cfg, &built);
            run_methods(cfg, &built, &resolved)
        });
        match outcome {
            Ok(verdicts) => rows.extend(verdicts.into_iter().map(|v| ScanRow {
                value,
                method: v.method,
                p_star: Some(v.p_star),
                threshold: Some(v.threshold),
                decision: Some(v.decision),
                error: None,
            })),
            Err(e) => rows.extend(methods(cfg.method).iter().map(|&m| ScanRow {
                value,
                method: m,
                p_star: None,
                threshold: None,
                decision: None,
                error: Some(e.to_string()),
            })),
        }
    }

    let bytes = match cfg.output.format {
        OutputFormat::Json => json_bytes(&ScanReport {
            config: &shown,
            axis: &sc.axis,
            rows: &rows,
        }),
        OutputFormat::Csv => {
            let header = [
                sc.axis.as_str(),
                "method",
                "p_star",
                "threshold",
                "decision",
                "error",
            ]
            .map(String::from);
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        num(r.value),
                        method_name(r.method).into(),
                        r.p_star.map(num).unwrap_or_default(),
                        r.threshold.map(num).unwrap_or_default(),
                        r.decision.map(decision_name).unwrap_or_default().into(),
                        r.error.clone().unwrap_or_default(),
                    ]
                })
                .collect();
            csv_bytes(&header, &body)
        }
    };
    emit(cfg.output.path.as_deref(), &bytes)?;
    Ok(EXIT_CERTIFIED)
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    pass: bool,
    config: &'a RunConfig,
    reports: &'a [Type1Report],
}

/// Monte Carlo Type-I check on an analytic surface. Exit 0 when every
/// requested method stays within `zeta + 3 * stderr`, 1 otherwise.
pub fn simulate(cfg: &RunConfig) -> Result<i32, CliError> {
    cfg.validate()?;
    let shown = cfg.for_report();
    let sim = cfg.simulate.clone().unwrap_or_default();
    if sim.trials == 0 {
        return Err(CliError::Usage("trials must be at least 1".into()));
    }
    let OracleSource::Analytic {
        n,
        surface,
        coupling,
    } = &cfg.oracle.source
    else {
        return Err(CliError::Usage(
            "simulate needs an analytic oracle with known true risks".into(),
        ));
    };
    let grid = need_grid(cfg, "analytic")?;
    let built = Built {
        oracle: Box::new(AnalyticOracle::new(grid.clone(), surface, *n, *coupling)?),
        grid: grid.clone(),
        is_table: false,
        table_noise: None,
    };
    let resolved = resolve(cfg, &built);
    let reports = methods(sim.method.unwrap_or(cfg.method))
        .iter()
        .map(|m| {
            let method = match m {
                Method::Grid => SimMethod::Grid,
                Method::GpUcb => SimMethod::GpUcb {
                    cfg: resolved.ucb.clone(),
                    params: cfg.threshold,
                },
            };
            simulate_type1(
                &grid, surface, &cfg.spec, *n, sim.trials, *coupling, &method, cfg.seed, cfg.jobs,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pass = reports.iter().all(|r| r.pass);
    let bytes = match cfg.output.format {
        OutputFormat::Json => json_bytes(&SimulateReport {
            pass,
            config: &shown,
            reports: &reports,
        }),
        OutputFormat::Csv => {
            let header = [
                "method",
                "trials",
                "rejections",
                "indeterminate",
                "rejection_rate",
                "stderr",
                "bound",
                "pass",
            ]
            .map(String::from);
            let rows: Vec<Vec<String>> = reports
                .iter()
                .map(|r| {
                    vec![
                        method_name(r.method).into(),
                        r.trials.to_string(),
                        r.rejections.to_string(),
                        r.indeterminate.to_string(),
                        num(r.rejection_rate),
                        num(r.stderr),
                        num(r.bound),
                        r.pass.to_string(),
                    ]
                })
                .collect();
            csv_bytes(&header, &rows)
        }
    };
    emit(cfg.output.path.as_deref(), &bytes)?;
    Ok(if pass {
        EXIT_CERTIFIED
    } else {
        EXIT_NOT_CERTIFIED
    })
}

#[derive(Serialize)]
struct CompareSummary<'a> {
    config: &'a RunConfig,
    resolved: &'a Resolved,
    grid_p_star: f64,
    ucb_p_hat_t: f64,
    ucb_max_observed: f64,
    ucb_argmax_observed: &'a [f64],
    gamma_t: f64,
    zeta_prime: f64,
    grid: &'a Verdict,
    ucb: &'a Verdict,
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<(), CliError> {
    emit(Some(&path), bytes)
}

/// Exhaustive and GP-UCB tests side by side. Writes `grid.csv`,
/// `trajectory.csv` and `summary.json` into the output directory.
pub fn compare(cfg: &RunConfig) -> Result<i32, CliError> {
    cfg.validate()?;
    let shown = cfg.for_report();
    let dir: &Path = cfg
        .output
        .path
        .as_deref()
        .ok_or_else(|| CliError::Usage("compare needs --output DIR".into()))?;
    let built = build_oracle(cfg, &cfg.oracle.source)?;
    let resolved = resolve(cfg, &built);
    let c = compare_methods(
        &*built.oracle,
        &built.grid,
        &cfg.spec,
        &resolved.ucb,
        &cfg.threshold,
        resolved.grid_seed,
        resolved.ucb_seeding,
        cfg.jobs,
    )?;
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let axes: Vec<String> = built.grid.axes().iter().map(|a| a.name.clone()).collect();

    let Evidence::Grid(points) = &c.grid.evidence else {
        unreachable!("grid verdict carries per-point evidence")
    };
    let mut header = vec!["index".to_string()];
    header.extend(axes.iter().cloned());
    header.extend(["risk_hat", "p_value", "log_p_value"].map(String::from));
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let mut r = vec![p.index.to_string()];
            r.extend(p.lambda.iter().map(|&v| num(v)));
            r.extend([num(p.risk_hat), num(p.p_value), num(p.log_p_value)]);
            r
        })
        .collect();
    write_file(dir.join("grid.csv"), &csv_bytes(&header, &rows))?;

    let mut header = vec!["round".to_string(), "index".to_string()];
    header.extend(axes.iter().cloned());
    header.extend(["observed", "cumulative", "mean", "std"].map(String::from));
    let rows: Vec<Vec<String>> = c
        .trace
        .iter()
        .map(|t| {
            let mut r = vec![t.round.to_string(), t.index.to_string()];
            r.extend(t.lambda.iter().map(|&v| num(v)));
            r.extend([num(t.observed), num(t.cumulative), num(t.mean), num(t.std)]);
            r
        })
        .collect();
    write_file(dir.join("trajectory.csv"), &csv_bytes(&header, &rows))?;

    let Evidence::GpUcb(ev) = &c.ucb.evidence else {
        unreachable!("ucb verdict carries GP-UCB evidence")
    };
    let summary = CompareSummary {
        config: &shown,
        resolved: &resolved,
        grid_p_star: c.grid.p_star,
        ucb_p_hat_t: c.ucb.p_star,
        ucb_max_observed: ev.search.max_observed,
        ucb_argmax_observed: &ev.search.argmax_observed,
        gamma_t: ev.gamma_t,
        zeta_prime: ev.zeta_prime,
        grid: &c.grid,
        ucb: &c.ucb,
    };
    write_file(dir.join("summary.json"), &json_bytes(&summary))?;
    Ok(EXIT_CERTIFIED)
}
