use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use rffence_core::PhaseProfile;

use crate::error::{CliError, CliResult, IoContext};

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).at(path)?;
    for r in rows {
        w.serialize(r).at(path)?;
    }
    w.flush().at(path)
}

/// One CSV row per array row, radians, shortest round-trip formatting.
pub fn write_phase_matrix(path: &Path, phase: &PhaseProfile) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).at(path)?;
    for row in phase.values().rows() {
        w.write_record(row.iter().map(|v| v.to_string())).at(path)?;
    }
    w.flush().at(path)
}

pub fn read_matrix(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .at(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.at(path)?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::io(path, format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Wall-clock figures, kept out of the deterministic tables.
#[derive(Debug, Serialize)]
pub struct Timing {
    pub command: &'static str,
    pub units: usize,
    pub total_s: f64,
    pub per_unit_s: f64,
}

impl Timing {
    pub fn new(command: &'static str, elapsed: Duration, units: usize) -> Self {
        let total_s = elapsed.as_secs_f64();
        Self {
            command,
            units,
            total_s,
            per_unit_s: if units == 0 { 0.0 } else { total_s / units as f64 },
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write_csv(&dir.join("timing.csv"), std::slice::from_ref(self))
    }
}
