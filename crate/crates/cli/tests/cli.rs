use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const PROSAC: &str = env!("CARGO_BIN_EXE_prosac");
const MOCK: &str = env!("CARGO_BIN_EXE_prosac-mock-runner");

fn grid() -> Value {
    json!({"axes": [{"name": "steps", "values": [1, 2]}, {"name": "eps", "values": [0.01, 0.02]}]})
}

fn analytic(risk: f64) -> Value {
    json!({"kind": "analytic", "n": 500, "surface": {"kind": "constant", "risk": risk}})
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(PROSAC)
        .args(args)
        .env_remove("PROSAC_RUNNER_TIMEOUT_SECS")
        .output()
        .unwrap()
}

fn run_config(cfg: &Path, cmd: &str, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

const TABLE: &str =
    "steps,eps,run_1,n\n1,0.01,0.02,100\n1,0.02,0.04,100\n2,0.01,0.01,100\n2,0.02,0.06,100\n";

#[test]
fn zero_risk_certifies() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(
        d.path(),
        "c.json",
        &json!({"grid": grid(), "oracle": {"source": analytic(0.0)}}),
    );
    let o = run_config(&cfg, "certify", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["decision"], "certified_safe");
    assert_eq!(v["verdicts"][0]["method"], "grid");
    assert_eq!(v["verdicts"][0]["n"], 500);
}

#[test]
fn half_risk_is_not_certified() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(
        d.path(),
        "c.json",
        &json!({"grid": grid(), "oracle": {"source": analytic(0.5)}}),
    );
    let o = run_config(&cfg, "certify", &["--format", "csv"]);
    assert_eq!(code(&o), 1);
    assert_eq!(
        String::from_utf8(o.stdout).unwrap(),
        "method,p_star,threshold,decision\ngrid,1.0,0.05,not_certified\n"
    );
}

#[test]
fn short_ucb_run_is_indeterminate() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(
        d.path(),
        "c.json",
        &json!({"grid": grid(), "oracle": {"source": analytic(0.0)}, "ucb": {"rounds": 10}}),
    );
    let o = run_config(&cfg, "certify", &["--method", "gp_ucb"]);
    assert_eq!(code(&o), 2);
    let v = stdout_json(&o);
    assert!(v["verdicts"][0]["threshold"].as_f64().unwrap() <= 0.0);
    assert!(v["verdicts"][0]["evidence"]["gp_ucb"]["min_rounds"]
        .as_u64()
        .is_some());
}

#[test]
fn missing_table_names_the_path() {
    let d = TempDir::new().unwrap();
    let cfg = write_config(
        d.path(),
        "c.json",
        &json!({"oracle": {"source": {"kind": "table", "path": "no_such_table.csv"}}}),
    );
    let o = run_config(&cfg, "certify", &[]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("no_such_table.csv"), "{err}");
    assert!(o.stdout.is_empty());
}

#[test]
fn bad_invocations_exit_3() {
    assert_eq!(code(&run(&["certify"])), 3);
    assert_eq!(code(&run(&["frobnicate"])), 3);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);

    let d = TempDir::new().unwrap();
    let bad = write_config(
        d.path(),
        "bad.json",
        &json!({"oracle": {"source": analytic(0.0)}, "typo": 1}),
    );
    let o = run_config(&bad, "certify", &[]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("typo"));

    let no_grid = write_config(
        d.path(),
        "ng.json",
        &json!({"oracle": {"source": analytic(0.0)}}),
    );
    assert_eq!(code(&run_config(&no_grid, "certify", &[])), 3);

    let spec = write_config(
        d.path(),
        "spec.json",
        &json!({"grid": grid(), "oracle": {"source": analytic(0.0)}, "spec": {"alpha": 1.5}}),
    );
    assert_eq!(code(&run_config(&spec, "certify", &[])), 3);

    let ok = write_config(
        d.path(),
        "ok.json",
        &json!({"grid": grid(), "oracle": {"source": analytic(0.0)}}),
    );
    assert_eq!(code(&run_config(&ok, "certify", &["--jobs", "0"])), 3);
}

#[test]
fn table_relative_to_config_and_grid_check() {
    let d = TempDir::new().unwrap();
    fs::create_dir(d.path().join("data")).unwrap();
    fs::write(d.path().join("data/t.csv"), TABLE).unwrap();
    let cfg = write_config(
        d.path(),
        "c.json",
        &json!({"oracle": {"source": {"kind": "table", "path": "data/t.csv"}}, "output": {"format": "csv"}}),
    );
    // Run from elsewhere: the path resolves against the config directory.
    let o = Command::new(PROSAC)
        .args(["certify", "--config", cfg.to_str().unwrap()])
        .current_dir(std::env::temp_dir())
        .output()
        .unwrap();
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));

    let other = json!({"axes": [{"name": "steps", "values": [1, 3]}, {"name": "eps", "values": [0.01, 0.02]}]});
    let cfg = write_config(
        d.path(),
        "g.json",
        &json!({"grid": other, "oracle": {"source": {"kind": "table", "path": "data/t.csv"}}}),
    );
    let o = run_config(&cfg, "certify", &[]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));
}

#[test]
fn output_file_and_flag_precedence() {
    let d = TempDir::new().unwrap();
    let out = d.path().join("verdict.json");
    let cfg = write_config(
        d.path(),
        "c.json",
        &json!({"grid": grid(), "oracle": {"source": analytic(0.0)}, "seed": 5, "output": {"format": "csv"}}),
    );
    let o = run_config(
        &cfg,
        "certify",
        &[
            "--format",
            "json",
            "--seed",
            "9",
            "--output",
            out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["config"]["seed"], 9);
    assert_eq!(v["config"]["output"]["format"], "json");
}

#[test]
fn scan_rows_sorted_with_errors_inline() {
    let d = TempDir::new().unwrap();
    let template =
        json!({"kind": "analytic", "n": 300, "surface": {"kind": "constant", "risk": "{value}"}});
    let cfg = write_config(
        d.path(),
        "c.json",
        &json!({
            "grid": grid(), "oracle": {"source": analytic(0.0)}, "output": {"format": "csv"},
            "scan": {"axis": "risk", "values": [0.2, 1.5, 0.0], "template": template}
        }),
    );
    let o = run_config(&cfg, "scan", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "risk,method,p_star,threshold,decision,error");
    assert!(lines[1].starts_with("0.0,grid,") && lines[1].ends_with("certified_safe,"));
    assert_eq!(lines[2], "0.2,grid,1.0,0.05,not_certified,");
    assert!(lines[3].starts_with("1.5,grid,,,,") && lines[3].contains("outside"));

    // Command-line values replace the configured sweep.
    let o = run_config(&cfg, "scan", &["--values", "0.3,0.1"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let firsts: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(firsts, ["0.1", "0.3"]);

    let empty = write_config(
        d.path(),
        "e.json",
        &json!({"grid": grid(), "oracle": {"source": analytic(0.0)}, "scan": {"axis": "risk", "values": []}}),
    );
    assert_eq!(code(&run_config(&empty, "scan", &[])), 3);
}

#[test]
fn scan_over_runner_arguments() {
    let d = TempDir::new().unwrap();
    for (name, body) in [
        ("t0.05.csv", TABLE),
        ("t0.1.csv", &TABLE.replace("0.06,100", "0.50,100")),
    ] {
        fs::write(d.path().join(name), body).unwrap();
    }
    let prefix = d.path().join("t").display().to_string();
    let template = json!({"kind": "subprocess", "command": [MOCK, "--table", format!("{prefix}{{value}}.csv")]});
    let cfg = write_config(
        d.path(),
        "c.json",
        &json!({
            "grid": grid(), "oracle": {"source": analytic(0.0)}, "output": {"format": "csv"},
            "scan": {"axis": "epsilon", "values": [0.1, 0.05, 0.2], "template": template}
        }),
    );
    let o = run_config(&cfg, "scan", &[]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.splitn(6, ',').collect())
        .collect();
    assert_eq!(rows[0][0], "0.05");
    assert_eq!(rows[1][0], "0.1");
    assert_eq!(rows[1][2], "1.0");
    assert_eq!(rows[2][0], "0.2");
    assert!(
        !rows[2][5].is_empty(),
        "missing table must be reported in its row"
    );
}

#[test]
fn simulate_checks_and_preconditions() {
    let d = TempDir::new().unwrap();
    let unsafe_surface = json!({"kind": "analytic", "n": 300, "surface": {"kind": "values", "risks": [0.05, 0.12, 0.02, 0.03]}});
    let cfg = write_config(
        d.path(),
        "c.json",
        &json!({"grid": grid(), "oracle": {"source": unsafe_surface}, "simulate": {"trials": 300}}),
    );
    let o = run_config(&cfg, "simulate", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["pass"], true);
    assert_eq!(v["reports"][0]["trials"], 300);
    assert_eq!(code(&run_config(&cfg, "simulate", &["--trials", "0"])), 3);

    let safe = write_config(
        d.path(),
        "s.json",
        &json!({"grid": grid(), "oracle": {"source": analytic(0.02)}}),
    );
    let o = run_config(&safe, "simulate", &["--trials", "10"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));

    fs::write(d.path().join("t.csv"), TABLE).unwrap();
    let table = write_config(
        d.path(),
        "t.json",
        &json!({"oracle": {"source": {"kind": "table", "path": "t.csv"}}}),
    );
    assert_eq!(code(&run_config(&table, "simulate", &[])), 3);
}

#[test]
fn compare_writes_three_artifacts() {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("t.csv"), TABLE).unwrap();
    let cfg = write_config(
        d.path(),
        "c.json",
        &json!({"oracle": {"source": {"kind": "table", "path": "t.csv"}}, "ucb": {"rounds": 12}}),
    );
    let out = d.path().join("cmp");
    assert_eq!(
        code(&run_config(
            &cfg,
            "compare",
            &["--output", out.to_str().unwrap()]
        )),
        0
    );
    let grid_csv = fs::read_to_string(out.join("grid.csv")).unwrap();
    assert!(grid_csv.starts_with("index,steps,eps,risk_hat,p_value,log_p_value\n"));
    assert_eq!(grid_csv.lines().count(), 5);
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 13);
    let s: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(s["grid_p_star"].as_f64().unwrap() > 0.0);
    assert!(s["gamma_t"].as_f64().unwrap() > 0.0);

    assert_eq!(code(&run_config(&cfg, "compare", &[])), 3);
}

#[test]
fn runner_matches_table_and_reports_failures() {
    let d = TempDir::new().unwrap();
    let table = d.path().join("t.csv");
    fs::write(&table, TABLE).unwrap();
    let t = table.to_str().unwrap();
    let by_table = write_config(
        d.path(),
        "t.json",
        &json!({"oracle": {"source": {"kind": "table", "path": t}}, "output": {"format": "csv"}}),
    );
    let by_runner = |mode: &str, name: &str| {
        write_config(
            d.path(),
            name,
            &json!({
                "grid": grid(), "output": {"format": "csv"},
                "oracle": {"source": {"kind": "subprocess", "timeout_secs": 1.0,
                    "command": [MOCK, "--table", t, "--mode", mode, "--after", "1"]}}
            }),
        )
    };
    let a = run_config(&by_table, "certify", &[]);
    let b = run_config(&by_runner("echo", "echo.json"), "certify", &[]);
    assert_eq!(code(&a), 1);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(code(&a), code(&b));

    for (mode, needle) in [
        ("drift", "n=101"),
        ("malformed", "malformed"),
        ("crash", "exited"),
        ("error", "attack diverged"),
        ("hang", "no response"),
    ] {
        let o = run_config(&by_runner(mode, &format!("{mode}.json")), "certify", &[]);
        assert_eq!(code(&o), 3, "{mode}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{mode}: {err}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let d = TempDir::new().unwrap();
    let bump = json!({"kind": "analytic", "n": 400, "surface":
        {"kind": "bump", "base": 0.02, "peak": 0.13, "center": [0.0, 1.0], "width": 0.4}});
    let cfg = write_config(
        d.path(),
        "c.json",
        &json!({"grid": grid(), "oracle": {"source": bump}, "method": "both", "ucb": {"rounds": 8, "noise_std": 0.01},
                "seed": 11, "simulate": {"trials": 50}}),
    );
    for cmd in ["certify", "simulate"] {
        let outs: Vec<Vec<u8>> = (0..2)
            .map(|i| {
                let p = d.path().join(format!("{cmd}{i}.json"));
                let o = run_config(
                    &cfg,
                    cmd,
                    &[
                        "--output",
                        p.to_str().unwrap(),
                        "--jobs",
                        if i == 0 { "1" } else { "3" },
                    ],
                );
                assert!(
                    code(&o) < 3,
                    "{cmd}: {}",
                    String::from_utf8_lossy(&o.stderr)
                );
                fs::read(p).unwrap()
            })
            .collect();
        assert_eq!(outs[0], outs[1], "{cmd}");
    }
}
