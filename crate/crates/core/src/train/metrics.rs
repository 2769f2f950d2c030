use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 5] = ["epoch", "lr", "loss", "top1", "top5"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub top1: f64,
    pub top5: f64,
    pub samples: usize,
}

/// Writes the per-epoch log; a run with no epochs yields the header alone.
pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_record(METRICS_HEADER).map_err(|e| Error::Data(e.to_string()))?;
    for r in rows {
        w.write_record([r.epoch.to_string(), format!("{:.6e}", r.lr), format!("{:.6}", r.loss), format!("{:.4}", r.top1), format!("{:.4}", r.top5)])
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
