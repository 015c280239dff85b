//! Report rows and their CSV encoding.

use std::io::Write;
use std::path::Path;

use dpse::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Result of one method on one test distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub config_hash: String,
    pub method: String,
    pub seed: u64,
    pub success_rate: f64,
    pub mean_cycle_time: f64,
    /// Simulator executions charged to the method.
    pub executions: u64,
    /// Empty, or why a fallback was used.
    pub note: String,
}

/// Per-method means over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub method: String,
    pub seeds: usize,
    pub mean_success_rate: f64,
    pub mean_cycle_time: f64,
    pub mean_executions: f64,
}

/// One timestep of the nonstationary loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub config_hash: String,
    pub process: String,
    pub method: String,
    pub seed: u64,
    pub t: usize,
    /// Oracle success of the executed params under the distribution at `t`.
    pub oracle_success: f64,
    pub executed_success: bool,
    pub cumulative_failures: usize,
    /// Centroid of the executed pattern (touch-point mean or spiral centre).
    pub centroid_x: f64,
    pub centroid_y: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

/// Cumulative failures after the horizon, in the layout of a failure table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub config_hash: String,
    pub process: String,
    pub method: String,
    pub seeds: usize,
    pub mean_failures: f64,
    pub failure_rate: f64,
    /// Relative failure reduction against the fixed grid, when it ran.
    pub reduction_vs_fixed: Option<f64>,
}

/// Held-out prediction loss of one adapted model on one test task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRow {
    pub config_hash: String,
    pub method: String,
    pub adapt_records: usize,
    pub task_seed: u64,
    pub heldout_loss: f64,
    pub source_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaSummaryRow {
    pub config_hash: String,
    pub method: String,
    pub adapt_records: usize,
    pub tasks: usize,
    pub mean_heldout_loss: f64,
}

/// Wall-clock per method and seed; kept apart so metric files stay byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub config_hash: String,
    pub method: String,
    pub seed: u64,
    pub wall_clock_s: f64,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Integrity(format!("csv: {e}"))
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(true).from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let f = std::fs::File::create(path)?;
    write_csv(rows, std::io::BufWriter::new(f))
}

pub fn read_csv_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    rd.deserialize().map(|r| r.map_err(csv_err)).collect()
}

/// Means per method in first-appearance order.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let sel: Vec<&MetricsRow> = rows.iter().filter(|r| r.method == m).collect();
            let n = sel.len() as f64;
            SummaryRow {
                config_hash: sel[0].config_hash.clone(),
                method: m.to_string(),
                seeds: sel.len(),
                mean_success_rate: sel.iter().map(|r| r.success_rate).sum::<f64>() / n,
                mean_cycle_time: sel.iter().map(|r| r.mean_cycle_time).sum::<f64>() / n,
                mean_executions: sel.iter().map(|r| r.executions as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Refuses to combine rows produced under different configurations.
pub fn check_single_config<'a>(hashes: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut first: Option<&str> = None;
    for h in hashes {
        match first {
            None => first = Some(h),
            Some(f) if f != h => {
                return Err(Error::Config(format!("report mixes configurations {f} and {h}")));
            }
            _ => {}
        }
    }
    Ok(())
}
