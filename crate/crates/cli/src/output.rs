//! Artifact writers: `results.csv`, `report.json` and `plotdata/*.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;
use crate::run::{Outcome, Row};

pub fn results_csv(rows: &[Row]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::io("results.csv", e.into_error()))
}

/// Writes every artifact under `dir` and returns the written paths.
pub fn write_artifacts(outcome: &Outcome, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let plot_dir = dir.join("plotdata");
    fs::create_dir_all(&plot_dir).map_err(|e| CliError::io(&plot_dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("results.csv");
    fs::write(&path, results_csv(&outcome.rows)?).map_err(|e| CliError::io(&path, e))?;
    written.push(path);

    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
    written.push(path);

    for t in &outcome.plots {
        let path = plot_dir.join(format!("{}.csv", t.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&t.header)?;
        for r in &t.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
