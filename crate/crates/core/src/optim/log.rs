use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const TRAIN_LOG_HEADER: &str = "step,loss_d,loss_g,wall_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Discriminator loss, or the classifier's cross-entropy.
    pub loss_d: f64,
    pub loss_g: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSnapshot {
    pub epoch: usize,
    pub step: usize,
    pub metrics: Vec<(String, f64)>,
}

impl EpochSnapshot {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochSnapshot>,
}

impl TrainLog {
    pub fn push(&mut self, record: StepRecord) -> Result<()> {
        if let Some(last) = self.steps.last() {
            if record.step <= last.step {
                return Err(Error::InvalidArgument(format!(
                    "step {} recorded after step {}",
                    record.step, last.step
                )));
            }
        }
        self.steps.push(record);
        Ok(())
    }

    /// Losses without timing, for determinism comparisons.
    pub fn losses(&self) -> Vec<(usize, f64, Option<f64>)> {
        self.steps
            .iter()
            .map(|r| (r.step, r.loss_d, r.loss_g))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRAIN_LOG_HEADER}\n");
        for r in &self.steps {
            let g = r.loss_g.map(|g| g.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{g},{}", r.step, r.loss_d, r.wall_ms);
        }
        out
    }

    /// Epoch snapshots as `epoch,step,key,value` rows.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,step,metric,value\n");
        for e in &self.epochs {
            for (k, v) in &e.metrics {
                let _ = writeln!(out, "{},{},{k},{v}", e.epoch, e.step);
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
