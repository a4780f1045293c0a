use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    lattice_count, EvalSeed, Metadata, OracleDescriptor, OracleError, OracleKind, RiskOracle,
};
use crate::grid::{Axis, GridError, HyperGrid};
use crate::hb_stats::{self, RiskEstimate, StatsError};

#[derive(Debug, Error)]
pub enum TableError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("bad header: {0}")]
    Header(String),
    #[error("line {line}, column `{column}`: {message}")]
    Cell {
        line: u64,
        column: String,
        message: String,
    },
    #[error("table has {got} rows but its grid has {expected} points")]
    Dimension { expected: usize, got: usize },
    #[error("line {line}: point {got:?} out of lexicographic order (expected {expected:?})")]
    Order {
        line: u64,
        expected: Vec<f64>,
        got: Vec<f64>,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Json,
}

impl TableFormat {
    /// Format implied by a `.csv` or `.json` extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }
}

/// Risks for every grid point over `R` independent attack runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct RiskTable {
    grid: HyperGrid,
    runs: Vec<Vec<f64>>,
    n: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRepr {
    axes: Vec<Axis>,
    n: u64,
    runs: Vec<Vec<f64>>,
}

impl TryFrom<TableRepr> for RiskTable {
    type Error = TableError;

    fn try_from(r: TableRepr) -> Result<Self, TableError> {
        RiskTable::new(HyperGrid::new(r.axes)?, r.runs, r.n)
    }
}

impl From<RiskTable> for TableRepr {
    fn from(t: RiskTable) -> Self {
        TableRepr {
            axes: t.grid.axes().to_vec(),
            n: t.n,
            runs: t.runs,
        }
    }
}

fn check_entry(v: f64, n: u64) -> Result<f64, String> {
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("risk {v} outside [0,1]"));
    }
    // Tolerate text rounding, then store the exact lattice value.
    let k = (v * n as f64).round();
    if (v * n as f64 - k).abs() > 1e-6 {
        return Err(format!("risk {v} is not a multiple of 1/{n}"));
    }
    Ok(k / n as f64)
}

impl RiskTable {
    /// `runs[i][r]` is run `r`'s risk at grid point `i`.
    pub fn new(grid: HyperGrid, mut runs: Vec<Vec<f64>>, n: u64) -> Result<Self, TableError> {
        if n == 0 {
            return Err(TableError::Invalid("n must be at least 1".into()));
        }
        if runs.len() != grid.len() {
            return Err(TableError::Dimension {
                expected: grid.len(),
                got: runs.len(),
            });
        }
        let r = runs.first().map_or(0, Vec::len);
        if r == 0 {
            return Err(TableError::Invalid("table needs at least one run".into()));
        }
        for (i, row) in runs.iter_mut().enumerate() {
            if row.len() != r {
                return Err(TableError::Invalid(format!(
                    "point {i} has {} runs, expected {r}",
                    row.len()
                )));
            }
            for (j, v) in row.iter_mut().enumerate() {
                *v = check_entry(*v, n)
                    .map_err(|m| TableError::Invalid(format!("point {i}, run {}: {m}", j + 1)))?;
            }
        }
        Ok(Self { grid, runs, n })
    }

    pub fn grid(&self) -> &HyperGrid {
        &self.grid
    }

    pub fn runs(&self) -> &[Vec<f64>] {
        &self.runs
    }

    pub fn run_count(&self) -> usize {
        self.runs[0].len()
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Mean risk over runs at grid point `index`, on the `1/(nR)` lattice.
    pub fn average(&self, index: usize) -> f64 {
        let n = self.n as f64;
        let k: f64 = self.runs[index].iter().map(|v| (v * n).round()).sum();
        k / (n * self.run_count() as f64)
    }

    /// Pooled standard deviation across runs of the per-run p-values:
    /// the square root of the mean over points of the sample variance.
    /// Zero for single-run tables.
    pub fn pooled_p_value_std(&self, alpha: f64) -> Result<f64, StatsError> {
        let r = self.run_count();
        if r < 2 {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for row in &self.runs {
            let ps = row
                .iter()
                .map(|&v| hb_stats::p_value(v, self.n, alpha))
                .collect::<Result<Vec<_>, _>>()?;
            let mean = ps.iter().sum::<f64>() / r as f64;
            total += ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
        }
        Ok((total / self.runs.len() as f64).sqrt())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = self.grid.axes().iter().map(|a| a.name.clone()).collect();
        header.extend((1..=self.run_count()).map(|r| format!("run_{r}")));
        header.push("n".into());
        out.write_record(&header)?;
        for (i, row) in self.runs.iter().enumerate() {
            let mut rec: Vec<String> = self.grid.point(i).iter().map(f64::to_string).collect();
            rec.extend(row.iter().map(f64::to_string));
            rec.push(self.n.to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path, format: TableFormat) -> Result<(), TableError> {
        let io_err = |source| TableError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        match format {
            TableFormat::Csv => self
                .write_csv(file)
                .map_err(|e| TableError::Invalid(format!("writing `{}`: {e}", path.display()))),
            TableFormat::Json => serde_json::to_writer_pretty(file, self)
                .map_err(|e| TableError::Invalid(format!("writing `{}`: {e}", path.display()))),
        }
    }
}

/// Load a risk table.
///
/// CSV: a header naming the grid axes, then `run_1..run_R`, then `n`; one
/// row per grid point in lexicographic order (first axis slowest). Axis
/// values are taken in order of first appearance. JSON: `{"axes": [...],
/// "n": ..., "runs": [[...], ...]}` with one inner list per grid point.
pub fn load_table(path: &Path, format: TableFormat) -> Result<RiskTable, TableError> {
    let file = File::open(path).map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        TableFormat::Csv => read_csv(BufReader::new(file)),
        TableFormat::Json => {
            serde_json::from_reader(BufReader::new(file)).map_err(|e| TableError::Parse {
                line: e.line() as u64,
                message: e.to_string(),
            })
        }
    }
}

pub(crate) fn read_csv<R: io::Read>(reader: R) -> Result<RiskTable, TableError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| TableError::Header(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.last().map(String::as_str) != Some("n") {
        return Err(TableError::Header("last column must be `n`".into()));
    }
    let first_run = header
        .iter()
        .position(|h| h == "run_1")
        .ok_or_else(|| TableError::Header("missing `run_1` column".into()))?;
    if first_run == 0 {
        return Err(TableError::Header("no axis columns before `run_1`".into()));
    }
    let n_runs = header.len() - 1 - first_run;
    for (j, h) in header[first_run..header.len() - 1].iter().enumerate() {
        if *h != format!("run_{}", j + 1) {
            return Err(TableError::Header(format!(
                "expected `run_{}`, found `{h}`",
                j + 1
            )));
        }
    }

    let mut axes: Vec<Axis> = header[..first_run]
        .iter()
        .map(|h| Axis::new(h.as_str(), Vec::new()))
        .collect();
    let mut points = Vec::new();
    let mut runs = Vec::new();
    let mut lines = Vec::new();
    let mut n: Option<u64> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| TableError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let cell = |j: usize, message: String| TableError::Cell {
            line,
            column: header[j].clone(),
            message,
        };
        let parse = |j: usize| -> Result<f64, TableError> {
            let v: f64 = rec[j]
                .parse()
                .map_err(|_| cell(j, format!("`{}` is not a number", &rec[j])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(cell(j, format!("`{}` is not finite", &rec[j])))
            }
        };
        let last = header.len() - 1;
        let row_n: u64 = rec[last]
            .parse()
            .map_err(|_| cell(last, format!("`{}` is not a positive integer", &rec[last])))?;
        if row_n == 0 {
            return Err(cell(last, "n must be at least 1".into()));
        }
        match n {
            None => n = Some(row_n),
            Some(n0) if n0 != row_n => {
                return Err(cell(
                    last,
                    format!("n={row_n} differs from n={n0} on earlier rows"),
                ))
            }
            _ => {}
        }
        let mut point = Vec::with_capacity(first_run);
        for (j, axis) in axes.iter_mut().enumerate() {
            let v = parse(j)?;
            if !axis.values.contains(&v) {
                axis.values.push(v);
            }
            point.push(v);
        }
        let mut row = Vec::with_capacity(n_runs);
        for j in first_run..last {
            row.push(check_entry(parse(j)?, row_n).map_err(|m| cell(j, m))?);
        }
        points.push(point);
        runs.push(row);
        lines.push(line);
    }
    let n = n.ok_or_else(|| TableError::Invalid("table has no rows".into()))?;
    let grid = HyperGrid::new(axes)?;
    if points.len() != grid.len() {
        return Err(TableError::Dimension {
            expected: grid.len(),
            got: points.len(),
        });
    }
    for (i, p) in points.into_iter().enumerate() {
        let expected = grid.point(i);
        if p != expected {
            return Err(TableError::Order {
                line: lines[i],
                expected,
                got: p,
            });
        }
    }
    RiskTable::new(grid, runs, n)
}

/// Oracle backed by a [`RiskTable`]. `Run(s)` reads run `s mod R`;
/// `Average` returns the mean over runs.
#[derive(Debug, Clone)]
pub struct TableOracle {
    table: RiskTable,
    descriptor: OracleDescriptor,
}

impl TableOracle {
    pub fn new(table: RiskTable) -> Self {
        let descriptor = OracleDescriptor {
            kind: OracleKind::Table,
            attack_metadata: Metadata::new(),
            concurrency_safe: true,
            n: table.n,
        };
        Self { table, descriptor }
    }

    pub fn with_metadata(mut self, metadata: Metadata) -> Self {
        self.descriptor.attack_metadata = metadata;
        self
    }

    pub fn table(&self) -> &RiskTable {
        &self.table
    }
}

impl RiskOracle for TableOracle {
    fn descriptor(&self) -> &OracleDescriptor {
        &self.descriptor
    }

    fn evaluate(&self, lambda: &[f64], seed: EvalSeed) -> Result<RiskEstimate, OracleError> {
        let i = self
            .table
            .grid
            .index_of(lambda)
            .ok_or_else(|| OracleError::UnknownLambda(lambda.to_vec()))?;
        let risk = match seed {
            EvalSeed::Run(s) => {
                let r = self.table.run_count() as u64;
                self.table.runs[i][(s % r) as usize]
            }
            EvalSeed::Average => self.table.average(i),
        };
        debug_assert!(seed == EvalSeed::Average || lattice_count(risk, self.table.n).is_some());
        Ok(RiskEstimate::new(risk, self.table.n, lambda.to_vec())?)
    }

    fn fingerprint_material(&self) -> serde_json::Value {
        serde_json::to_value(&self.table).expect("table serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "steps,step_size,run_1,run_2,n\n\
        1,0.01,0.06,0.10,100\n\
        1,0.02,0.00,0.02,100\n\
        2,0.01,0.13,0.11,100\n\
        2,0.02,0.05,0.07,100\n";

    fn err(text: &str) -> TableError {
        read_csv(text.as_bytes()).unwrap_err()
    }

    #[test]
    fn reads_csv() {
        let t = read_csv(CSV.as_bytes()).unwrap();
        assert_eq!(t.grid().len(), 4);
        assert_eq!(t.run_count(), 2);
        assert_eq!(t.n(), 100);
        assert_eq!(t.runs()[2], vec![0.13, 0.11]);
        assert_eq!(t.grid().axes()[1].values, vec![0.01, 0.02]);
    }

    #[test]
    fn run_selection_and_average() {
        let o = TableOracle::new(read_csv(CSV.as_bytes()).unwrap());
        let at = |s| o.evaluate(&[1.0, 0.01], s).unwrap().risk_hat();
        assert_eq!(at(EvalSeed::Run(0)), 0.06);
        assert_eq!(at(EvalSeed::Run(1)), 0.10);
        assert_eq!(at(EvalSeed::Run(7)), 0.10);
        assert_eq!(at(EvalSeed::Average), 0.08);
        assert!(matches!(
            o.evaluate(&[3.0, 0.01], EvalSeed::Average),
            Err(OracleError::UnknownLambda(_))
        ));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let t = read_csv(CSV.as_bytes()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), t);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<RiskTable>(&json).unwrap(), t);
    }

    #[test]
    fn out_of_range_cell_is_named() {
        let e = err("x,run_1,n\n0,0.5,10\n1,1.5,10\n");
        let msg = e.to_string();
        assert!(matches!(e, TableError::Cell { line: 3, .. }), "{msg}");
        assert!(msg.contains("run_1") && msg.contains("1.5"), "{msg}");
    }

    #[test]
    fn off_lattice_and_garbage_cells() {
        assert!(matches!(
            err("x,run_1,n\n0,0.55,10\n"),
            TableError::Cell { .. }
        ));
        assert!(matches!(
            err("x,run_1,n\n0,abc,10\n"),
            TableError::Cell { .. }
        ));
        assert!(matches!(
            err("x,run_1,n\n0,0.5,10\n1,0.5,20\n"),
            TableError::Cell { .. }
        ));
    }

    #[test]
    fn row_count_must_match_grid() {
        let e = err("a,b,run_1,n\n0,0,0.1,10\n0,1,0.1,10\n1,0,0.1,10\n");
        assert!(
            matches!(
                e,
                TableError::Dimension {
                    expected: 4,
                    got: 3
                }
            ),
            "{e}"
        );
    }

    #[test]
    fn order_is_enforced() {
        let e = err("a,b,run_1,n\n0,0,0.1,10\n1,0,0.1,10\n0,1,0.1,10\n1,1,0.1,10\n");
        assert!(matches!(e, TableError::Order { line: 3, .. }), "{e}");
    }

    #[test]
    fn header_checks() {
        assert!(matches!(
            err("x,run_1,count\n0,0.1,10\n"),
            TableError::Header(_)
        ));
        assert!(matches!(
            err("x,run_2,n\n0,0.1,10\n"),
            TableError::Header(_)
        ));
        assert!(matches!(err("run_1,n\n0.1,10\n"), TableError::Header(_)));
        assert!(matches!(
            err("x,run_1,run_3,n\n0,0.1,0.1,10\n"),
            TableError::Header(_)
        ));
    }

    #[test]
    fn json_dimension_error() {
        let e = serde_json::from_str::<RiskTable>(
            r#"{"axes":[{"name":"x","values":[0,1]}],"n":10,"runs":[[0.1]]}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("2 points"), "{e}");
    }

    #[test]
    fn pooled_std() {
        let single = RiskTable::new(
            HyperGrid::single_axis("x", vec![0.0]).unwrap(),
            vec![vec![0.1]],
            10,
        )
        .unwrap();
        assert_eq!(single.pooled_p_value_std(0.1).unwrap(), 0.0);
        let t = read_csv(CSV.as_bytes()).unwrap();
        let s = t.pooled_p_value_std(0.1).unwrap();
        let mut total = 0.0;
        for row in t.runs() {
            let a = hb_stats::p_value(row[0], 100, 0.1).unwrap();
            let b = hb_stats::p_value(row[1], 100, 0.1).unwrap();
            total += (a - b).powi(2) / 2.0;
        }
        assert!((s - (total / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(
            TableFormat::from_path(Path::new("a/b.CSV")),
            Some(TableFormat::Csv)
        );
        assert_eq!(
            TableFormat::from_path(Path::new("t.json")),
            Some(TableFormat::Json)
        );
        assert_eq!(TableFormat::from_path(Path::new("t.txt")), None);
    }
}
