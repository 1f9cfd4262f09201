//! CSV and JSON serialization of harness tables.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::certificates::{GammaTable, Method};
use crate::error::{Error, Result};
use crate::rate::RateFunction;
use crate::sequence::IndexSetFamily;

/// Version of the column layout; every CSV row carries it.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::InvalidParameter(format!("unknown format {other:?}"))),
        }
    }
}

/// Rows rendered once in both output formats.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub csv: String,
    pub json: serde_json::Value,
}

impl Table {
    pub fn from_rows<T: Serialize>(rows: &[T]) -> Result<Self> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(Self {
            csv: String::from_utf8(bytes).expect("csv output is utf-8"),
            json: serde_json::to_value(rows)?,
        })
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        Ok(match format {
            OutputFormat::Csv => self.csv.clone(),
            OutputFormat::Json => serde_json::to_string_pretty(&self.json)? + "\n",
        })
    }

    /// Writes `<stem>.csv` or `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str, format: OutputFormat) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.{}", format.extension())), self.render(format)?)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaRow {
    pub schema_version: u32,
    pub n: usize,
    pub gamma: f64,
    pub method: Method,
    pub family: IndexSetFamily,
    pub c_used: f64,
}

pub fn gamma_rows(table: &GammaTable) -> Vec<GammaRow> {
    table
        .entries
        .iter()
        .map(|e| GammaRow {
            schema_version: SCHEMA_VERSION,
            n: e.n,
            gamma: e.gamma,
            method: e.method,
            family: table.family,
            c_used: table.c_used,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiRow {
    pub schema_version: u32,
    pub t: f64,
    pub phi: f64,
    pub active_n: usize,
}

/// `t = 0` followed by 141 log-spaced points in `[1e-6, 1e1]`.
pub fn default_t_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..=140).map(|i| 10f64.powf(-6.0 + i as f64 / 20.0)))
        .collect()
}

pub fn phi_rows(phi: &RateFunction, ts: &[f64]) -> Vec<PhiRow> {
    ts.iter()
        .map(|&t| PhiRow {
            schema_version: SCHEMA_VERSION,
            t,
            phi: phi.eval(t),
            active_n: phi.active_n(t),
        })
        .collect()
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
