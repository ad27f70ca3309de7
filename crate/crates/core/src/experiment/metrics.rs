use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::IterationMetrics;

pub const METRICS_HEADER: &str = "arm,seed,iteration,dist_mean,dist_min,dist_max,loss_rl,loss_il,val_reward,lambda,step_size,wall_s";

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub arm: String,
    pub seed: u64,
    pub iteration: usize,
    pub dist_mean: f64,
    pub dist_min: f64,
    pub dist_max: f64,
    pub loss_rl: f64,
    pub loss_il: f64,
    pub val_reward: f64,
    pub lambda: f64,
    pub step_size: f64,
    pub wall_s: f64,
}

impl MetricsRow {
    pub fn new(arm: &str, seed: u64, m: &IterationMetrics) -> Self {
        MetricsRow {
            arm: arm.to_string(),
            seed,
            iteration: m.iteration,
            dist_mean: m.dist.mean,
            dist_min: m.dist.min,
            dist_max: m.dist.max,
            loss_rl: m.loss_rl,
            loss_il: m.loss_il,
            val_reward: m.val_reward,
            lambda: m.lambda,
            step_size: m.step_size,
            wall_s: m.wall_s,
        }
    }
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(METRICS_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, metrics_to_csv(rows)?).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = text.lines().next().unwrap_or_default();
    if header != METRICS_HEADER {
        return Err(Error::Config(format!("{}: unexpected header `{header}`", path.display())));
    }
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
