use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prosac_cli::config::{MethodChoice, OutputFormat, RunConfig, ScanConfig, SimulateConfig};
use prosac_cli::{commands, CliError, EXIT_ERROR};

/// Certify (alpha, zeta)-safety of an adversarial attack's parameter grid.
///
/// Exit codes: 0 certified (or scan/compare/simulate succeeded), 1 not
/// certified (or Type-I check failed), 2 indeterminate, 3 error.
#[derive(Parser)]
#[command(name = "prosac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for oracle calls and simulation trials.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output file (a directory for `compare`); stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether the configured grid is (alpha, zeta)-safe.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<MethodChoice>,
    },
    /// Certify once per value of a swept oracle parameter.
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: Option<String>,
        /// Comma separated sweep values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long, value_enum)]
        method: Option<MethodChoice>,
    },
    /// Estimate the Type-I error on a surface with known risks.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum)]
        method: Option<MethodChoice>,
    },
    /// Run the exhaustive and GP-UCB tests side by side.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.jobs.is_some() {
        cfg.jobs = common.jobs;
    }
    if let Some(p) = &common.output {
        cfg.output.path = Some(p.clone());
    }
    if let Some(f) = common.format {
        cfg.output.format = f;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Certify { common, method } => {
            let mut cfg = load(&common)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            commands::certify(&cfg)
        }
        Command::Scan {
            common,
            axis,
            values,
            method,
        } => {
            let mut cfg = load(&common)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            if axis.is_some() || values.is_some() {
                let sc = cfg.scan.get_or_insert_with(|| ScanConfig {
                    axis: String::new(),
                    values: Vec::new(),
                    points: Vec::new(),
                    template: None,
                });
                if let Some(a) = axis {
                    sc.axis = a;
                }
                if let Some(v) = values {
                    sc.values = v;
                    sc.points.clear();
                }
                if sc.axis.is_empty() {
                    return Err(CliError::Usage("scan needs --axis".into()));
                }
            }
            commands::scan(&cfg)
        }
        Command::Simulate {
            common,
            trials,
            method,
        } => {
            let mut cfg = load(&common)?;
            let sim = cfg.simulate.get_or_insert_with(SimulateConfig::default);
            if let Some(t) = trials {
                sim.trials = t;
            }
            if method.is_some() {
                sim.method = method;
            }
            commands::simulate(&cfg)
        }
        Command::Compare { common } => commands::compare(&load(&common)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("prosac: error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
