//! Per-epoch metrics file.

use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};
use srr_core::train::EpochRecord;

pub const HEADER: [&str; 8] = [
    "epoch",
    "f",
    "rho_batch",
    "h",
    "grad_norm",
    "pi_iters",
    "pi_residual",
    "wall_ms",
];

/// Appends one row per epoch and flushes it immediately.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
    wall_time: bool,
}

impl MetricsWriter {
    pub fn create(path: &Path, wall_time: bool) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        inner.write_record(HEADER)?;
        inner.flush()?;
        Ok(Self { inner, wall_time })
    }

    pub fn append(&mut self, rec: &EpochRecord) -> Result<()> {
        let wall = if self.wall_time { rec.wall_ms } else { 0.0 };
        self.inner.write_record([
            rec.epoch.to_string(),
            rec.f.to_string(),
            rec.rho.to_string(),
            rec.h.to_string(),
            rec.grad_norm.to_string(),
            rec.pi_iters.to_string(),
            rec.pi_residual.to_string(),
            wall.to_string(),
        ])?;
        self.inner.flush()?;
        Ok(())
    }
}
