//! Result files: `rounds.csv`, `summary.json` and `sweep.csv`.

use std::fs;
use std::io;
use std::path::Path;

use fedrot::federation::SweepCell;
use fedrot::{FederationConfig, RunResult};
use serde::Serialize;

pub const ROUNDS_HEADER: [&str; 8] = [
    "round",
    "loss",
    "agg_error",
    "dispersion",
    "alignment_gain",
    "rotation_deviation",
    "tau_diag",
    "wall_ms",
];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_rounds_csv(path: &Path, run: &RunResult) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(ROUNDS_HEADER).map_err(csv_err)?;
    for r in &run.rounds {
        w.write_record([
            r.round.to_string(),
            float(r.loss),
            float(r.agg_error),
            float(r.dispersion),
            r.alignment_gain.map(float).unwrap_or_default(),
            float(r.rotation_deviation),
            float(r.tau_diag),
            float(r.wall_ms),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub version: &'static str,
    pub seed: u64,
    pub status: &'static str,
    pub failure: Option<String>,
    pub rounds_completed: usize,
    pub final_loss: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub final_agg_error: Option<f64>,
    pub mean_agg_error: Option<f64>,
    pub final_dispersion: Option<f64>,
    pub wall_ms: f64,
    pub config: &'a FederationConfig,
}

pub fn status(run: &RunResult) -> &'static str {
    if run.is_complete() {
        "ok"
    } else {
        "diverged"
    }
}

impl<'a> Summary<'a> {
    pub fn new(run: &'a RunResult) -> Self {
        let last = run.rounds.last();
        Self {
            version: fedrot::VERSION,
            seed: run.config.seed,
            status: status(run),
            failure: run.failure.as_ref().map(|e| e.to_string()),
            rounds_completed: run.rounds.len(),
            final_loss: run.final_loss(),
            final_accuracy: last.and_then(|r| r.accuracy),
            final_agg_error: last.map(|r| r.agg_error),
            mean_agg_error: run.mean_agg_error(),
            final_dispersion: last.map(|r| r.dispersion),
            wall_ms: run.wall_ms,
            config: &run.config,
        }
    }
}

pub fn write_summary(path: &Path, run: &RunResult) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(&Summary::new(run)).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// Writes `rounds.csv` and `summary.json` into `dir`.
pub fn write_run(dir: &Path, run: &RunResult) -> io::Result<()> {
    write_rounds_csv(&dir.join("rounds.csv"), run)?;
    write_summary(&dir.join("summary.json"), run)
}

/// One row per cell: grid parameters, seed, status, final loss, mean
/// aggregation error and an error message for failed cells.
pub fn write_sweep_csv(path: &Path, cells: &[SweepCell]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let axes: Vec<&str> = cells
        .first()
        .map(|c| c.params.iter().map(|(k, _)| k.as_str()).collect())
        .unwrap_or_default();
    let mut header: Vec<&str> = axes.clone();
    header.extend(["seed", "status", "final_loss", "mean_agg_error", "detail"]);
    w.write_record(&header).map_err(csv_err)?;
    for cell in cells {
        let mut row: Vec<String> = cell.params.iter().map(|(_, v)| v.clone()).collect();
        row.push(cell.seed.to_string());
        match &cell.result {
            Ok(run) => {
                row.push(status(run).into());
                row.push(run.final_loss().map(float).unwrap_or_default());
                row.push(run.mean_agg_error().map(float).unwrap_or_default());
                row.push(run.failure.as_ref().map(|e| e.to_string()).unwrap_or_default());
            }
            Err(e) => {
                row.extend(["invalid".into(), String::new(), String::new(), e.to_string()]);
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}
