//! JSON and CSV writers for run artifacts.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::run::SCHEMA_VERSION;
use crate::error::{Error, Result};
use crate::ssl::{MigrationRecord, SslEpoch};
use crate::sup::SupEpoch;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// A CSV record type with a fixed header.
pub trait CsvRow: Serialize {
    const HEADER: &'static [&'static str];
}

/// Writes the header and then every row, so empty tables still carry their columns.
pub fn write_csv<R: CsvRow>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let parse = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(parse)?;
    w.write_record(R::HEADER).map_err(parse)?;
    for r in rows {
        w.serialize(r).map_err(parse)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub l_ce: f64,
    pub l_mig: f64,
    pub l_a: f64,
    pub l_e: f64,
    pub val_auc: f64,
    pub val_delta_sp: f64,
    pub val_delta_eo: f64,
    pub mu0: f64,
    pub sigma0: f64,
    pub mu1: f64,
    pub sigma1: f64,
    pub schema_version: u32,
}

impl CsvRow for EpochRow {
    const HEADER: &'static [&'static str] = &[
        "epoch",
        "l_ce",
        "l_mig",
        "l_a",
        "l_e",
        "val_auc",
        "val_delta_sp",
        "val_delta_eo",
        "mu0",
        "sigma0",
        "mu1",
        "sigma1",
        "schema_version",
    ];
}

impl From<&SupEpoch> for EpochRow {
    fn from(e: &SupEpoch) -> Self {
        EpochRow {
            epoch: e.epoch,
            l_ce: e.l_ce,
            l_mig: e.l_mig,
            l_a: e.l_a,
            l_e: e.l_e,
            val_auc: e.val_auc,
            val_delta_sp: e.val_delta_sp,
            val_delta_eo: e.val_delta_eo,
            mu0: e.group_stats[0].mean,
            sigma0: e.group_stats[0].std,
            mu1: e.group_stats[1].mean,
            sigma1: e.group_stats[1].std,
            schema_version: SCHEMA_VERSION,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainRow {
    pub epoch: usize,
    pub l_pre: f64,
    pub l_con: f64,
    pub l_rec: f64,
    pub l_mig: f64,
    pub n_outliers: usize,
    pub schema_version: u32,
}

impl CsvRow for PretrainRow {
    const HEADER: &'static [&'static str] =
        &["epoch", "l_pre", "l_con", "l_rec", "l_mig", "n_outliers", "schema_version"];
}

impl From<&SslEpoch> for PretrainRow {
    fn from(e: &SslEpoch) -> Self {
        PretrainRow {
            epoch: e.epoch,
            l_pre: e.total,
            l_con: e.l_con,
            l_rec: e.l_rec,
            l_mig: e.l_mig,
            n_outliers: e.n_outliers,
            schema_version: SCHEMA_VERSION,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub mu0: f64,
    pub sigma0: f64,
    pub mu1: f64,
    pub sigma1: f64,
    pub n_flips_0to1: usize,
    pub n_flips_1to0: usize,
    pub n_skipped: usize,
    pub schema_version: u32,
}

impl CsvRow for TraceRow {
    const HEADER: &'static [&'static str] =
        &["epoch", "mu0", "sigma0", "mu1", "sigma1", "n_flips_0to1", "n_flips_1to0", "n_skipped", "schema_version"];
}

impl From<&MigrationRecord> for TraceRow {
    fn from(r: &MigrationRecord) -> Self {
        TraceRow {
            epoch: r.epoch,
            mu0: r.mu0,
            sigma0: r.sigma0,
            mu1: r.mu1,
            sigma1: r.sigma1,
            n_flips_0to1: r.n_flips_0to1,
            n_flips_1to0: r.n_flips_1to0,
            n_skipped: r.n_skipped,
            schema_version: SCHEMA_VERSION,
        }
    }
}

/// Reads a CSV with headers into string maps, for tests and tooling.
pub fn read_csv(path: &Path) -> Result<Vec<std::collections::BTreeMap<String, String>>> {
    let parse = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(parse)?;
    let header = r.headers().map_err(parse)?.clone();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(parse)?;
            Ok(header.iter().map(str::to_string).zip(rec.iter().map(str::to_string)).collect())
        })
        .collect()
}
