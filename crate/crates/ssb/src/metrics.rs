//! Per-epoch training log.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub wall_time_s: f64,
}

/// Append-only list of epoch rows, stored as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<EpochRow>,
}

impl MetricsLog {
    pub fn push(&mut self, row: EpochRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[EpochRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        if self.rows.is_empty() {
            w.write_record(["epoch", "train_loss", "train_acc", "val_acc", "wall_time_s"])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> AppResult<Self> {
        let mut rows = Vec::new();
        for r in csv::Reader::from_reader(text.as_bytes()).deserialize() {
            rows.push(r.map_err(|e| AppError::Data(format!("metrics: {e}")))?);
        }
        Ok(MetricsLog { rows })
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        fs::write(path, self.to_csv()).map_err(|e| AppError::io(path, e))
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        Self::from_csv(&fs::read_to_string(path).map_err(|e| AppError::io(path, e))?)
    }
}
