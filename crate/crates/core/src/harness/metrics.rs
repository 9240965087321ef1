//! Metrics CSV: one row per (run, epoch, split).
//!
//! Columns are `run_id, config_hash, seed, epoch, split, loss, acc`. A VQA
//! run writes a `train` and a `val` row per epoch and one `test` row at the
//! best epoch, `2 * epochs + 1` rows in total. Contrastive pretraining
//! writes `pretrain_train` (empty `acc`) and `pretrain_val` (NCE accuracy)
//! rows per epoch.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub acc: Option<f64>,
}

/// Rows a VQA run with `epochs` epochs writes.
pub fn rows_per_run(epochs: usize) -> usize {
    2 * epochs + 1
}

/// Rows a contrastive pretraining run with `epochs` epochs writes.
pub fn rows_per_pretrain(epochs: usize) -> usize {
    2 * epochs
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}
