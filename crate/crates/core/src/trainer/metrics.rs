//! Run metrics and their CSV files.
//!
//! `metrics.csv` holds one row per (evaluation point, layer) and is a pure
//! function of the config and seeds. `train.csv` holds per-minibatch
//! training losses. Timing goes to `perf.csv`, which is the only file that
//! differs between otherwise identical runs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: u64,
    pub layer: usize,
    pub loss: f64,
    /// Classification error; empty for regression.
    pub error: Option<f64>,
    /// Spikes per neuron per step.
    pub firing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub iteration: u64,
    pub layer: usize,
    pub loss: f64,
    pub reg: f64,
    pub firing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfRow {
    pub iteration: u64,
    /// Timestep weight updates applied so far (each updates every layer).
    pub updates: u64,
    pub wall_ms: f64,
    pub us_per_step: f64,
    /// Optimizer moments plus the largest single-layer gradient.
    pub learning_bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub eval: Vec<MetricRow>,
    pub train: Vec<TrainRow>,
    pub perf: Vec<PerfRow>,
}

pub const METRICS_HEADER: [&str; 5] = ["iteration", "layer", "loss", "error", "firing_rate"];
const TRAIN_HEADER: [&str; 5] = ["iteration", "layer", "loss", "reg", "firing_rate"];
const PERF_HEADER: [&str; 5] = ["iteration", "updates", "wall_ms", "us_per_step", "learning_bytes"];

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

impl RunMetrics {
    /// Writes `metrics.csv`, `train.csv` and `perf.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_rows(&dir.join("metrics.csv"), &METRICS_HEADER, &self.eval)?;
        write_rows(&dir.join("train.csv"), &TRAIN_HEADER, &self.train)?;
        write_rows(&dir.join("perf.csv"), &PERF_HEADER, &self.perf)?;
        Ok(())
    }

    /// Latest evaluation row for each layer.
    pub fn final_eval(&self) -> Vec<&MetricRow> {
        let Some(last) = self.eval.last() else {
            return Vec::new();
        };
        self.eval.iter().filter(|r| r.iteration == last.iteration).collect()
    }

    /// Evaluation rows of one layer, in order.
    pub fn layer_eval(&self, layer: usize) -> Vec<&MetricRow> {
        self.eval.iter().filter(|r| r.layer == layer).collect()
    }
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
