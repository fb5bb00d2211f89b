use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::eval::metrics::MetricSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub phase: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub early_stopped: bool,
}

impl PhaseLog {
    pub fn stopped_epoch(&self) -> usize {
        self.epochs.last().map_or(0, |e| e.epoch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub two_steps: bool,
    /// Sample counts of the train / validation / test splits.
    pub split_sizes: [usize; 3],
    /// Absent when encoder and classifier were trained jointly.
    pub phase1: Option<PhaseLog>,
    pub phase2: PhaseLog,
    pub encoder_checksum_before_phase2: Option<String>,
    pub encoder_checksum_after_phase2: Option<String>,
    pub test_metrics: MetricSet,
    /// Not serialized, so reports of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `phase  epoch  train_loss  val_loss`, tab-separated.
    pub fn loss_table(&self) -> String {
        let mut out = String::from("phase\tepoch\ttrain_loss\tval_loss\n");
        for log in self.phase1.iter().chain(std::iter::once(&self.phase2)) {
            for e in &log.epochs {
                let _ = writeln!(out, "{}\t{}\t{}\t{}", log.phase, e.epoch, e.train_loss, e.val_loss);
            }
        }
        out
    }

    pub fn checksums_match(&self) -> bool {
        self.encoder_checksum_before_phase2 == self.encoder_checksum_after_phase2
    }
}
