//! CSV / JSON-lines emission and the run manifest.
//!
//! Every CSV starts with a schema line `# swlab <table> v<version>`
//! followed by the header row. Floats carry 17 significant digits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{ObservabilityRecord, SuiteEntry, SweepRecord};
use crate::solver::{EnergyRecord, TraceData};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(x) if x.is_finite() => format!("{x:.16e}"),
            Cell::Float(x) => x.to_string(),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}
impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}
impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        Cell::Float(x.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Table { name: name.into(), columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    pub fn schema_line(&self) -> String {
        format!("# swlab {} v{SCHEMA_VERSION}", self.name)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(self.schema_line().as_bytes());
        buf.push(b'\n');
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf);
        let csv_err = |e: csv::Error| Error::Config(format!("csv encoding: {e}"));
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Config(format!("csv encoding: {e}")))
    }
}

pub const SUITE_COLUMNS: &[&str] = &[
    "n", "kappa", "n_r", "field", "check", "lhs", "rhs", "residual", "relative_residual", "slack",
    "scale", "refinement_order", "pass",
];

pub fn suite_table(name: &str, entries: &[SuiteEntry]) -> Table {
    let mut t = Table::new(name, SUITE_COLUMNS);
    for e in entries {
        let r = &e.report;
        t.push(vec![
            e.n.into(),
            e.kappa.into(),
            e.n_r.into(),
            e.field.as_str().into(),
            r.label.as_str().into(),
            r.lhs.into(),
            r.rhs.into(),
            r.residual.into(),
            r.relative_residual.into(),
            r.slack.into(),
            r.scale.into(),
            r.refinement_order.into(),
            r.passed.into(),
        ]);
    }
    t
}

pub const SWEEP_COLUMNS: &[&str] = &[
    "n", "kappa", "c", "T", "n_r", "field", "lambda", "boundary", "bulk_box", "gradient",
    "weighted", "lambda3_coeff", "extra", "lhs", "rhs0", "log_scale", "c0_hat", "flag", "pass",
];

pub fn sweep_table(records: &[SweepRecord]) -> Table {
    let mut t = Table::new("sweep", SWEEP_COLUMNS);
    for r in records {
        let term = |f: fn(&crate::verification::CarlemanTerms) -> f64| -> Cell {
            r.terms.as_ref().map(f).into()
        };
        t.push(vec![
            r.n.into(),
            r.kappa.into(),
            r.c.into(),
            r.t_max.into(),
            r.n_r.into(),
            r.field.as_str().into(),
            r.lambda.into(),
            term(|x| x.boundary),
            term(|x| x.bulk_box),
            term(|x| x.gradient),
            term(|x| x.weighted),
            term(|x| x.lambda3_coeff),
            term(|x| x.extra),
            term(|x| x.lhs),
            term(|x| x.rhs0),
            term(|x| x.log_scale),
            r.c0_hat.into(),
            r.flag.clone().unwrap_or_default().into(),
            r.passed.into(),
        ]);
    }
    t
}

pub const OBSERVABILITY_COLUMNS: &[&str] = &[
    "n", "kappa", "T", "seed", "n_r", "boundary_observation", "e1_0", "ratio", "threshold",
    "clears_threshold", "vacuous",
];

pub fn observability_table(n: usize, kappa: f64, records: &[ObservabilityRecord]) -> Table {
    let mut t = Table::new("observability", OBSERVABILITY_COLUMNS);
    for r in records {
        t.push(vec![
            n.into(),
            kappa.into(),
            r.t_max.into(),
            r.seed.into(),
            r.n_r.into(),
            r.boundary_observation.into(),
            r.e1_0.into(),
            r.ratio.into(),
            r.threshold.into(),
            r.clears_threshold.into(),
            r.vacuous.into(),
        ]);
    }
    t
}

pub fn trace_table(ell: u32, traces: &TraceData) -> Table {
    let mut t = Table::new(format!("trace-l{ell}"), &["t", "neumann", "dirichlet"]);
    for i in 0..traces.times.len() {
        t.push(vec![traces.times[i].into(), traces.neumann[i].into(), traces.dirichlet[i].into()]);
    }
    t
}

pub fn energy_table(e: &EnergyRecord) -> Table {
    let mut t = Table::new("energy", &["t", "e1", "e2", "e_conserved"]);
    for i in 0..e.times.len() {
        t.push(vec![e.times[i].into(), e.e1[i].into(), e.e2[i].into(), e.e_conserved[i].into()]);
    }
    t
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Passed,
    CheckFailed,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub schema_version: u32,
    pub timestamp_unix: u64,
    pub command: String,
    /// The effective config as `key = value` lines.
    pub config: Vec<String>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub checks: Vec<CheckOutcome>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_text: &str) -> Self {
        RunManifest {
            artifact: "swlab",
            version: env!("CARGO_PKG_VERSION"),
            schema_version: SCHEMA_VERSION,
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            command: command.to_string(),
            config: config_text.lines().map(str::to_string).collect(),
            status: RunStatus::Passed,
            error: None,
            checks: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(CheckOutcome { name: name.into(), passed, detail: detail.into() });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Collects output files in a staging directory and moves them into place
/// only when the run finishes; the manifest is written last.
pub struct ReportWriter {
    out: PathBuf,
    staging: PathBuf,
    files: Vec<String>,
}

impl ReportWriter {
    pub fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(io_err(out))?;
        let staging = out.join(format!(".staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        fs::create_dir(&staging).map_err(io_err(&staging))?;
        Ok(ReportWriter { out: out.to_path_buf(), staging, files: Vec::new() })
    }

    fn stage(&mut self, file: String, bytes: &[u8]) -> Result<()> {
        let path = self.staging.join(&file);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.files.push(file);
        Ok(())
    }

    /// Stages `<table>.csv`; empty tables produce no file.
    pub fn csv(&mut self, table: &Table) -> Result<()> {
        if table.rows.is_empty() {
            return Ok(());
        }
        let bytes = table.to_csv()?;
        self.stage(format!("{}.csv", table.name), &bytes)
    }

    /// Stages `<name>.jsonl`, one record per line; empty lists produce no file.
    pub fn jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r)
                .map_err(|e| Error::Config(format!("json encoding: {e}")))?;
            buf.push(b'\n');
        }
        self.stage(format!("{name}.jsonl"), &buf)
    }

    /// Moves staged files into the output directory and writes the manifest.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for f in &self.files {
            let dst = self.out.join(f);
            fs::rename(self.staging.join(f), &dst).map_err(io_err(&dst))?;
            written.push(dst);
        }
        manifest.files = std::mem::take(&mut self.files);
        if manifest.status == RunStatus::Passed && !manifest.all_passed() {
            manifest.status = RunStatus::CheckFailed;
        }
        written.push(write_manifest(&self.out, &manifest)?);
        Ok(written)
    }

    /// Drops staged files and records the failure in the manifest.
    pub fn abort(self, mut manifest: RunManifest, error: &Error) -> Result<PathBuf> {
        manifest.status = RunStatus::Failed;
        manifest.error = Some(error.to_string());
        manifest.files.clear();
        write_manifest(&self.out, &manifest)
    }
}

impl Drop for ReportWriter {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.staging);
    }
}

/// Writes the manifest through a temporary file and a rename.
pub fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let dst = out.join(MANIFEST_NAME);
    let tmp = out.join(format!(".{MANIFEST_NAME}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    serde_json::to_writer_pretty(&mut f, manifest)
        .map_err(|e| Error::Config(format!("json encoding: {e}")))?;
    f.write_all(b"\n").map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, &dst).map_err(io_err(&dst))?;
    Ok(dst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_17_digits() {
        assert_eq!(Cell::Float(0.1).render(), "1.0000000000000001e-1");
        assert_eq!(Cell::Float(f64::NAN).render(), "NaN");
        let x = 1.0 / 3.0;
        let back: f64 = Cell::Float(x).render().parse().unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn text_cells_are_quoted() {
        let mut t = Table::new("demo", &["a", "b"]);
        t.push(vec!["x, y".into(), 1usize.into()]);
        let s = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(s, "# swlab demo v1\na,b\n\"x, y\",1\n");
    }
}
