//! CSV results and the reproducibility record.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::RunConfig;

/// Rows of one results file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// A float with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// An optional float; empty when absent.
pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Serialize)]
struct Record<'a> {
    config_hash: String,
    version: &'static str,
    config: &'a RunConfig,
    results: Option<&'a Path>,
    rows: usize,
}

/// Path of the reproducibility record for a results file.
pub fn record_path(out: &Path) -> PathBuf {
    out.with_extension("repro.json")
}

/// Writes the table (with a trailing `config_hash` column) to the
/// configured output, or stdout, plus the reproducibility record next to a
/// results file.
pub fn emit(config: &RunConfig, table: &Table) -> anyhow::Result<()> {
    let hash = config.hash();
    let sink: Box<dyn Write> = match &config.settings.out {
        Some(path) => Box::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let mut header = table.header.clone();
    header.push("config_hash");
    w.write_record(&header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(String::as_str).chain([hash.as_str()]))?;
    }
    w.flush()?;
    if let Some(path) = &config.settings.out {
        let record = Record {
            config_hash: hash,
            version: env!("CARGO_PKG_VERSION"),
            config,
            results: Some(path),
            rows: table.rows.len(),
        };
        let rp = record_path(path);
        std::fs::write(&rp, serde_json::to_string_pretty(&record)? + "\n")
            .with_context(|| format!("cannot write {}", rp.display()))?;
    }
    Ok(())
}
