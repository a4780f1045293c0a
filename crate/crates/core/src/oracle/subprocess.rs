//! Oracle backed by an external runner process.
//!
//! The runner speaks `prosac-oracle/1`: UTF-8 JSON, one object per line, on
//! its standard input and output.
//!
//! ```text
//! child  -> {"protocol":"prosac-oracle/1","n":<int>,"metadata":{...}}      (handshake)
//! parent -> {"id":<int>,"lambda":[<real>,...],"seed":<int>,"per_sample":<bool>}
//! child  -> {"id":<int>,"risk":<real>,"n":<int>}  (+ "correct"/"fooled" 0/1 arrays)
//! child  -> {"id":<int>,"error":"<message>"}
//! ```
//!
//! The parent shuts the runner down by closing its standard input. Runners
//! must attack the same calibration set for every request; the parent
//! cannot check this.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

use super::{
    lattice_count, EvalSeed, Metadata, OracleDescriptor, OracleError, OracleKind, RiskOracle,
};
use crate::grid::HyperGrid;
use crate::hb_stats::{self, RiskEstimate, StatsError};

pub const PROTOCOL: &str = "prosac-oracle/1";

/// Per-request timeout unless configured otherwise.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

type Line = std::io::Result<Vec<u8>>;

#[derive(Debug)]
struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<Line>,
    next_id: u64,
    dead: Option<String>,
}

impl Channel {
    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, OracleError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(self.fail(OracleError::Io(e))),
            Err(RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                let _ = self.child.wait();
                self.dead = Some(format!("killed after {timeout:?} without a response"));
                Err(OracleError::Timeout(timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.reap();
                self.dead = Some(status.clone());
                Err(OracleError::ChildExited { status })
            }
        }
    }

    fn reap(&mut self) -> String {
        self.stdin = None;
        let deadline = Instant::now() + Duration::from_secs(2);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return status.to_string(),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => {
                    let _ = self.child.kill();
                    return self.child.wait().map_or_else(
                        |e| e.to_string(),
                        |s| format!("{s} after closing its output"),
                    );
                }
            }
        }
    }

    fn fail(&mut self, e: OracleError) -> OracleError {
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.dead = Some(e.to_string());
        e
    }
}

impl Drop for Channel {
    fn drop(&mut self) {
        if self.dead.is_none() {
            self.reap();
        }
    }
}

/// Risk oracle that forwards each evaluation to a runner process, one
/// request at a time.
#[derive(Debug)]
pub struct SubprocessOracle {
    command: Vec<String>,
    grid: Option<HyperGrid>,
    timeout: Duration,
    per_sample: bool,
    descriptor: OracleDescriptor,
    channel: Mutex<Channel>,
}

fn malformed(reason: impl Into<String>, bytes: &[u8]) -> OracleError {
    OracleError::Malformed {
        reason: reason.into(),
        bytes: bytes.to_vec(),
    }
}

impl SubprocessOracle {
    /// Start `command` and read its handshake. When `grid` is given,
    /// evaluations outside it are refused without contacting the runner.
    pub fn spawn(
        command: &[String],
        grid: Option<HyperGrid>,
        timeout: Duration,
    ) -> Result<Self, OracleError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| OracleError::Config("runner command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| OracleError::Spawn {
                command: command.join(" "),
                source,
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut buf = Vec::new();
                match reader.read_until(b'\n', &mut buf) {
                    Ok(0) => break,
                    Ok(_) => {
                        if buf.last() == Some(&b'\n') {
                            buf.pop();
                        }
                        if tx.send(Ok(buf)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        let mut channel = Channel {
            child,
            stdin,
            lines: rx,
            next_id: 0,
            dead: None,
        };

        let line = channel.recv(timeout)?;
        let (n, metadata) = parse_handshake(&line).map_err(|e| channel.fail(e))?;
        Ok(Self {
            command: command.to_vec(),
            grid,
            timeout,
            per_sample: false,
            descriptor: OracleDescriptor {
                kind: OracleKind::Subprocess,
                attack_metadata: metadata,
                concurrency_safe: false,
                n,
            },
            channel: Mutex::new(channel),
        })
    }

    /// Ask the runner for per-sample indicators and check them against the
    /// scalar risk.
    pub fn with_per_sample(mut self, on: bool) -> Self {
        self.per_sample = on;
        self
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn round_trip(&self, lambda: &[f64], seed: u64) -> Result<RiskEstimate, OracleError> {
        let mut ch = self.channel.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(status) = &ch.dead {
            return Err(OracleError::ChildExited {
                status: status.clone(),
            });
        }
        let id = ch.next_id;
        ch.next_id += 1;
        let request = serde_json::json!({
            "id": id,
            "lambda": lambda,
            "seed": seed,
            "per_sample": self.per_sample,
        });
        let mut bytes = serde_json::to_vec(&request).expect("request serializes");
        bytes.push(b'\n');
        let written = match ch.stdin.as_mut() {
            Some(stdin) => stdin.write_all(&bytes).and_then(|()| stdin.flush()),
            None => Err(std::io::ErrorKind::BrokenPipe.into()),
        };
        if written.is_err() {
            let status = ch.reap();
            ch.dead = Some(status.clone());
            return Err(OracleError::ChildExited { status });
        }
        let line = ch.recv(self.timeout)?;
        self.parse_response(&line, id, lambda)
    }

    fn parse_response(
        &self,
        line: &[u8],
        id: u64,
        lambda: &[f64],
    ) -> Result<RiskEstimate, OracleError> {
        let v: Value =
            serde_json::from_slice(line).map_err(|e| malformed(format!("not JSON: {e}"), line))?;
        let obj = v
            .as_object()
            .ok_or_else(|| malformed("not a JSON object", line))?;
        let got = obj
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| malformed("missing integer `id`", line))?;
        if got != id {
            return Err(OracleError::IdMismatch { expected: id, got });
        }
        if let Some(message) = obj.get("error") {
            let message = message
                .as_str()
                .map_or_else(|| message.to_string(), str::to_owned);
            return Err(OracleError::Runner { id, message });
        }
        let n = obj
            .get("n")
            .and_then(Value::as_u64)
            .ok_or_else(|| malformed("missing integer `n`", line))?;
        if n != self.descriptor.n {
            return Err(OracleError::NDrift {
                expected: self.descriptor.n,
                got: n,
            });
        }
        let risk = obj
            .get("risk")
            .and_then(Value::as_f64)
            .ok_or_else(|| malformed("missing numeric `risk`", line))?;
        let k = lattice_count(risk, n).ok_or(OracleError::Lattice { risk, n })?;
        let snapped = k as f64 / n as f64;

        if !self.per_sample {
            return Ok(RiskEstimate::new(snapped, n, lambda.to_vec())?);
        }
        let bits = |name: &str| -> Result<Vec<bool>, OracleError> {
            let arr = obj
                .get(name)
                .and_then(Value::as_array)
                .ok_or_else(|| malformed(format!("missing `{name}` array"), line))?;
            arr.iter()
                .map(|b| match b.as_u64() {
                    Some(0) => Ok(false),
                    Some(1) => Ok(true),
                    _ => Err(malformed(format!("`{name}` entries must be 0 or 1"), line)),
                })
                .collect()
        };
        let (correct, fooled) = (bits("correct")?, bits("fooled")?);
        if correct.len() as u64 != n {
            return Err(malformed(
                format!("{} indicators for n={n}", correct.len()),
                line,
            ));
        }
        let est = hb_stats::empirical_risk(&correct, &fooled, lambda.to_vec())?;
        if est.risk_hat() != snapped {
            return Err(StatsError::IndicatorMismatch {
                risk_hat: risk,
                count: est.count().unwrap_or(0),
                n,
            }
            .into());
        }
        Ok(est)
    }
}

fn parse_handshake(line: &[u8]) -> Result<(u64, Metadata), OracleError> {
    let bad = |m: String| OracleError::Handshake(format!("{m}: `{}`", line.escape_ascii()));
    let v: Value = serde_json::from_slice(line).map_err(|e| bad(format!("not JSON ({e})")))?;
    let protocol = v.get("protocol").and_then(Value::as_str);
    if protocol != Some(PROTOCOL) {
        return Err(bad(format!("expected protocol `{PROTOCOL}`")));
    }
    let n = v
        .get("n")
        .and_then(Value::as_u64)
        .filter(|&n| n >= 1)
        .ok_or_else(|| bad("`n` must be a positive integer".into()))?;
    let metadata = match v.get("metadata") {
        None => Metadata::new(),
        Some(Value::Object(m)) => m.clone().into_iter().collect(),
        Some(_) => return Err(bad("`metadata` must be an object".into())),
    };
    Ok((n, metadata))
}

impl RiskOracle for SubprocessOracle {
    fn descriptor(&self) -> &OracleDescriptor {
        &self.descriptor
    }

    fn evaluate(&self, lambda: &[f64], seed: EvalSeed) -> Result<RiskEstimate, OracleError> {
        if let Some(g) = &self.grid {
            if g.index_of(lambda).is_none() {
                return Err(OracleError::UnknownLambda(lambda.to_vec()));
            }
        }
        match seed {
            EvalSeed::Run(s) => self.round_trip(lambda, s),
            EvalSeed::Average => Err(OracleError::AverageUnsupported("subprocess")),
        }
    }

    fn fingerprint_material(&self) -> serde_json::Value {
        serde_json::json!({
            "command": self.command,
            "grid": self.grid,
            "per_sample": self.per_sample,
        })
    }
}
