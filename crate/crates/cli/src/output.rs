//! Report assembly, CSV files and the run manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.to_owned(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// CSV bytes: 17 significant digits, `\n` line endings. A non-finite
    /// number is an error rather than a `NaN` cell.
    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for (r, row) in self.rows.iter().enumerate() {
            let mut record = Vec::with_capacity(row.len());
            for (c, cell) in row.iter().enumerate() {
                record.push(match cell {
                    Cell::Int(v) => v.to_string(),
                    Cell::Float(v) if v.is_finite() => format!("{v:.16e}"),
                    Cell::Float(v) => {
                        return Err(CliError::Runtime(format!(
                            "{}: row {}, column `{}` is {v}",
                            self.file,
                            r + 1,
                            self.header[c]
                        )))
                    }
                    Cell::Text(s) => s.clone(),
                    Cell::Bool(b) => b.to_string(),
                });
            }
            w.write_record(&record).map_err(io)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Everything a subcommand produces. `failure` is set when a checked
/// property does not hold.
#[derive(Debug, Default)]
pub struct Report {
    pub lines: Vec<String>,
    pub tables: Vec<Table>,
    pub parameters: BTreeMap<String, Value>,
    pub failure: Option<String>,
}

impl Report {
    pub fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    pub fn param(&mut self, key: &str, v: impl Into<Value>) {
        self.parameters.insert(key.to_owned(), v.into());
    }

    pub fn fail(&mut self, why: impl Into<String>) {
        self.failure.get_or_insert(why.into());
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct ManifestInfo<'a> {
    pub subcommand: &'a str,
    pub config_sha256: String,
    pub seed: Option<u64>,
}

/// Writes every table and `manifest.json` into `dir`. Nothing here depends on
/// the wall clock or on paths, so equal inputs give equal bytes.
pub fn write_outputs(dir: &Path, report: &Report, info: &ManifestInfo<'_>) -> Result<(), CliError> {
    let encoded: Vec<(String, Vec<u8>)> = report
        .tables
        .iter()
        .map(|t| Ok((t.file.clone(), t.to_bytes()?)))
        .collect::<Result<_, CliError>>()?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut outputs = BTreeMap::new();
    for (name, bytes) in &encoded {
        std::fs::write(dir.join(name), bytes)?;
        outputs.insert(name.clone(), Value::from(sha256_hex(bytes)));
    }
    let mut manifest = BTreeMap::new();
    manifest.insert("tool", Value::from("chainbsde"));
    manifest.insert("version", Value::from(env!("CARGO_PKG_VERSION")));
    manifest.insert("library_version", Value::from(chainbsde::VERSION));
    manifest.insert("subcommand", Value::from(info.subcommand));
    manifest.insert("config_sha256", Value::from(info.config_sha256.clone()));
    manifest.insert("seed", info.seed.map_or(Value::Null, Value::from));
    manifest.insert("parameters", Value::from(serde_json::Map::from_iter(report.parameters.clone())));
    manifest.insert("outputs", Value::from(serde_json::Map::from_iter(outputs)));
    manifest.insert("status", Value::from(if report.failure.is_some() { "property-failure" } else { "ok" }));
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_format() {
        let mut t = Table::new("x.csv", &["i", "v", "ok"]);
        t.push(vec![1usize.into(), 0.1.into(), true.into()]);
        let text = String::from_utf8(t.to_bytes().unwrap()).unwrap();
        assert_eq!(text, "i,v,ok\n1,1.0000000000000001e-1,true\n");
    }

    #[test]
    fn nan_is_rejected() {
        let mut t = Table::new("x.csv", &["v"]);
        t.push(vec![f64::NAN.into()]);
        let err = t.to_bytes().unwrap_err().to_string();
        assert!(err.contains("column `v`"), "{err}");
    }
}
