//! Test runner speaking `prosac-oracle/1`, answering from a risk table.
//!
//! Request seed `s` reads run `s mod R`. With `--mode` other than `echo`
//! the runner misbehaves from request `--after` on (0-based).

use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use prosac_core::{load_table, TableFormat};
use serde_json::{json, Value};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Echo,
    Malformed,
    Drift,
    Hang,
    Crash,
    Error,
}

#[derive(Parser)]
struct Args {
    #[arg(long)]
    table: PathBuf,
    #[arg(long, value_enum, default_value = "echo")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    after: u64,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let format = TableFormat::from_path(&args.table).unwrap_or(TableFormat::Csv);
    let table = match load_table(&args.table, format) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("mock runner: {e}");
            return ExitCode::from(2);
        }
    };
    let n = table.n();
    let mut out = io::stdout().lock();
    let hello = json!({
        "protocol": "prosac-oracle/1",
        "n": n,
        "metadata": {"attack": "mock", "table": args.table.display().to_string()},
    });
    if writeln!(out, "{hello}").and_then(|_| out.flush()).is_err() {
        return ExitCode::from(2);
    }

    for (count, line) in (0u64..).zip(io::stdin().lock().lines()) {
        let Ok(line) = line else { break };
        let req: Value = serde_json::from_str(&line).unwrap_or(Value::Null);
        let id = req.get("id").cloned().unwrap_or(Value::Null);
        let misbehave = count >= args.after;
        let reply = match args.mode {
            Mode::Crash if misbehave => return ExitCode::from(9),
            Mode::Hang if misbehave => loop {
                std::thread::sleep(Duration::from_secs(3600));
            },
            Mode::Malformed if misbehave => {
                let _ = writeln!(out, "risk=0.5 \u{1} not json");
                let _ = out.flush();
                continue;
            }
            Mode::Error if misbehave => json!({"id": id, "error": "attack diverged"}),
            _ => answer(
                &table,
                &req,
                id,
                n + u64::from(args.mode == Mode::Drift && misbehave),
            ),
        };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}

fn answer(table: &prosac_core::RiskTable, req: &Value, id: Value, n: u64) -> Value {
    let lambda: Option<Vec<f64>> = req
        .get("lambda")
        .and_then(Value::as_array)
        .and_then(|a| a.iter().map(Value::as_f64).collect());
    let Some(index) = lambda.and_then(|l| table.grid().index_of(&l)) else {
        return json!({"id": id, "error": "lambda is not a grid point"});
    };
    let seed = req.get("seed").and_then(Value::as_u64).unwrap_or(0);
    let runs = &table.runs()[index];
    let risk = runs[(seed % runs.len() as u64) as usize];
    let mut reply = json!({"id": id, "risk": risk, "n": n});
    if req.get("per_sample").and_then(Value::as_bool) == Some(true) {
        let k = (risk * table.n() as f64).round() as u64;
        let correct: Vec<u8> = (0..n).map(|_| 1).collect();
        let fooled: Vec<u8> = (0..n).map(|i| u8::from(i < k)).collect();
        reply["correct"] = json!(correct);
        reply["fooled"] = json!(fooled);
    }
    reply
}
