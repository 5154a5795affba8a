//! Run directories, CSV tables with sidecar metadata, and run records.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Shortest decimal that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    v.to_string()
}

/// An in-memory CSV table; every cell is already formatted.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width for {}", self.name);
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Rows whose `key` column equals `value`.
    pub fn filter<'a>(&'a self, key: &str, value: &'a str) -> impl Iterator<Item = &'a Vec<String>> + 'a {
        let k = self.column_index(key);
        self.rows.iter().filter(move |r| k.is_some_and(|k| r[k] == value))
    }

    /// Numeric value of `column` in `row`, NaN when absent or unparsable.
    pub fn get(&self, row: &[String], column: &str) -> f64 {
        self.column_index(column)
            .and_then(|i| row.get(i))
            .and_then(|s| s.parse().ok())
            .unwrap_or(f64::NAN)
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self { name, header, rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub label: String,
    pub rep: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedEntry>,
    pub per_rep: Vec<Value>,
    pub summary: Value,
    pub wall_time_secs: f64,
    pub outputs: Vec<String>,
}

impl RunRecord {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            experiment: config.experiment.as_str().to_string(),
            version: VERSION.to_string(),
            config: config.clone(),
            seeds: Vec::new(),
            per_rep: Vec::new(),
            summary: Value::Null,
            wall_time_secs: 0.0,
            outputs: Vec::new(),
        }
    }
}

/// Result of an experiment run: the record plus the tables to emit.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub tables: Vec<Table>,
}

impl RunOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn finish(mut self, elapsed: Duration) -> Self {
        self.record.wall_time_secs = elapsed.as_secs_f64();
        self.record.outputs = self.tables.iter().map(|t| format!("{}.csv", t.name)).collect();
        self
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    file: String,
    columns: &'a [String],
    rows: usize,
    version: &'static str,
    config: &'a ExperimentConfig,
}

/// A run directory. Creation refuses a non-empty directory unless forced.
#[derive(Debug, Clone)]
pub struct OutputDir {
    path: PathBuf,
}

impl OutputDir {
    pub fn create(path: &Path, force: bool) -> Result<Self> {
        if path.exists() {
            if !path.is_dir() {
                return Err(HarnessError::Config(format!("{} exists and is not a directory", path.display())));
            }
            if !force && fs::read_dir(path)?.next().is_some() {
                return Err(HarnessError::OutputExists(path.to_path_buf()));
            }
        }
        fs::create_dir_all(path)?;
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Writes `<name>.csv` and its `<name>.meta.json` sidecar.
    pub fn write_table(&self, table: &Table, config: &ExperimentConfig) -> Result<PathBuf> {
        let path = self.join(&format!("{}.csv", table.name));
        fs::write(&path, table.to_csv_bytes()?)?;
        let sidecar = Sidecar {
            file: format!("{}.csv", table.name),
            columns: &table.header,
            rows: table.rows.len(),
            version: VERSION,
            config,
        };
        fs::write(rdpg_core::io::sidecar_path(&path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.join(name);
        fs::write(&path, serde_json::to_string_pretty(value)?)?;
        Ok(path)
    }

    pub fn write_run(&self, run: &RunOutput) -> Result<()> {
        for table in &run.tables {
            self.write_table(table, &run.record.config)?;
        }
        self.write_json("run_record.json", &run.record)?;
        Ok(())
    }
}
