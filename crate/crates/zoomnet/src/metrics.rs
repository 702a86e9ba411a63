//! Per-epoch metrics as CSV.

use std::path::Path;

use zoomnet_core::train::EpochMetrics;

use crate::error::{Error, Result};

pub const HEADER: [&str; 7] = ["epoch", "loss", "train_acc", "test_acc", "residual", "displacement", "foldover"];

pub fn to_csv(history: &[EpochMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for m in history {
        w.write_record([
            m.epoch.to_string(),
            m.loss.to_string(),
            m.train_acc.to_string(),
            m.test_acc.to_string(),
            m.residual.to_string(),
            m.displacement.to_string(),
            m.foldover.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::format("csv", e.to_string()))
}

pub fn save(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    crate::wire::write_file(path, to_csv(history)?.as_bytes())
}
