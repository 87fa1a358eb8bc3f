//! Tables, summaries and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::ValueEnum;
use rdmsim::constants::{C_M_PER_S, HBAR_EV_S, PLANCK_TIME_S};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::scenario::Resolved;
use crate::NumericFailure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    UInt(u64),
    Float(f64),
    Bool(bool),
    Text(String),
}

macro_rules! cell_from {
    ($($t:ty => $v:ident as $c:ty),* $(,)?) => {
        $(impl From<$t> for Cell {
            fn from(x: $t) -> Self {
                Cell::$v(x as $c)
            }
        })*
    };
}
cell_from!(i32 => Int as i64, i64 => Int as i64, u32 => UInt as u64, u64 => UInt as u64, usize => UInt as u64, f64 => Float as f64);

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

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::UInt(v) => v.to_string(),
            // shortest round-trip form, with exponents for tiny and huge values
            Cell::Float(v) => serde_json::to_string(v).expect("finite"),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(v) => v.clone(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::UInt(v) => json!(v),
            Cell::Float(v) => json!(v),
            Cell::Bool(v) => json!(v),
            Cell::Text(v) => json!(v),
        }
    }

    fn is_finite(&self) -> bool {
        !matches!(self, Cell::Float(v) if !v.is_finite())
    }
}

#[macro_export]
macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($crate::output::Cell::from($x)),*] };
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    fn check_finite(&self) -> Result<()> {
        for (r, row) in self.rows.iter().enumerate() {
            if let Some(c) = row.iter().position(|c| !c.is_finite()) {
                return Err(NumericFailure(format!(
                    "non-finite value in table `{}`, row {r}, column `{}`",
                    self.name, self.columns[c]
                ))
                .into());
            }
        }
        Ok(())
    }

    fn render(&self, format: Format) -> Result<Vec<u8>> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&self.columns)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(Cell::text))?;
                }
                Ok(w.into_inner()?)
            }
            Format::Json => {
                let rows: Vec<Vec<serde_json::Value>> =
                    self.rows.iter().map(|r| r.iter().map(Cell::json).collect()).collect();
                let mut bytes = serde_json::to_vec_pretty(&json!({ "columns": self.columns, "rows": rows }))?;
                bytes.push(b'\n');
                Ok(bytes)
            }
        }
    }
}

/// Everything one scenario produces.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub tables: Vec<Table>,
    /// Files written verbatim, e.g. binary trajectories.
    pub raw: Vec<(String, Vec<u8>)>,
    pub summary: Vec<(String, Cell)>,
    /// One-line human summary.
    pub line: String,
    /// Set when the run finished but its own checks failed.
    pub failure: Option<String>,
}

impl RunOutput {
    pub fn note(&mut self, key: &str, value: impl Into<Cell>) {
        self.summary.push((key.into(), value.into()));
    }
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    bytes: u64,
    sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes data files, `scenario.json` and `manifest.json` into `dir`.
/// Returns the written data files.
pub fn write_run(
    dir: &Path,
    scenario: &Resolved,
    out: &RunOutput,
    format: Format,
    wall_time_s: f64,
) -> Result<Vec<PathBuf>> {
    for t in &out.tables {
        t.check_finite()?;
    }
    if let Some((k, _)) = out.summary.iter().find(|(_, v)| !v.is_finite()) {
        return Err(NumericFailure(format!("non-finite summary value `{k}`")).into());
    }
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for t in &out.tables {
        files.push((format!("{}.{}", t.name, format.extension()), t.render(format)?));
    }
    let mut summary = Table::new("summary", &["key", "value"]);
    for (k, v) in &out.summary {
        summary.push(vec![Cell::Text(k.clone()), v.clone()]);
    }
    files.push((format!("summary.{}", format.extension()), summary.render(format)?));
    files.extend(out.raw.iter().cloned());

    let canonical = scenario.canonical_json()?;
    files.push(("scenario.json".into(), canonical.clone()));

    let mut entries = Vec::new();
    let mut written = Vec::new();
    for (name, bytes) in &files {
        let path = dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        entries.push(OutputEntry {
            file: name.clone(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        written.push(path);
    }

    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "scenario": scenario.name,
        "module": scenario.module.name(),
        "scenario_sha256": sha256_hex(&canonical),
        "master_seed": scenario.master_seed,
        "tool": "rdmsim",
        "tool_version": env!("CARGO_PKG_VERSION"),
        "constants": {
            "hbar_ev_s": HBAR_EV_S,
            "planck_time_s": PLANCK_TIME_S,
            "c_m_per_s": C_M_PER_S,
        },
        "format": format,
        "threads": rayon::current_num_threads(),
        "wall_time_s": wall_time_s,
        "timestamp_unix": timestamp,
        "outputs": entries,
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(dir.join("manifest.json"), bytes)?;
    Ok(written)
}
