use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision threshold on the positive-class probability.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    /// Only one class present in the ground truth.
    pub auc: bool,
    /// No positive predictions.
    pub precision: bool,
    /// No positive labels.
    pub recall: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_eval: usize,
    pub positive_class: usize,
    pub undefined: UndefinedFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Auc,
    F1,
    Precision,
    Recall,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Accuracy,
        Metric::Auc,
        Metric::F1,
        Metric::Precision,
        Metric::Recall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Auc => "auc",
            Metric::F1 => "f1",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
        }
    }
}

impl MetricSet {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Accuracy => self.accuracy,
            Metric::Auc => self.auc,
            Metric::F1 => self.f1,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
        }
    }
}

/// Metrics from `(positive-class probability, true class)` pairs.
///
/// Accuracy, precision, recall and F1 use `p >= 0.5` as a positive call.
/// AUC is the Mann-Whitney statistic with tied scores sharing mid-ranks.
/// Undefined quantities are reported as 0 and flagged.
pub fn compute_metrics(scores: &[(f64, usize)], positive_class: usize) -> Result<MetricSet> {
    if scores.is_empty() {
        return Err(Error::arg("no scores to evaluate"));
    }
    if let Some(&(p, _)) = scores.iter().find(|(p, _)| !(0.0..=1.0).contains(p)) {
        return Err(Error::arg(format!("probability {p} outside [0, 1]")));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for &(p, y) in scores {
        match (p >= THRESHOLD, y == positive_class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = scores.len();
    let mut undefined = UndefinedFlags::default();
    let accuracy = (tp + tn) as f64 / n as f64;
    let precision = if tp + fp == 0 {
        undefined.precision = true;
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        undefined.recall = true;
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let auc = match rank_auc(scores, positive_class) {
        Some(a) => a,
        None => {
            undefined.auc = true;
            0.0
        }
    };
    Ok(MetricSet {
        accuracy,
        auc,
        f1,
        precision,
        recall,
        n_eval: n,
        positive_class,
        undefined,
    })
}

/// Mann-Whitney AUC via mid-ranks; `None` when a class is absent.
fn rank_auc(scores: &[(f64, usize)], positive_class: usize) -> Option<f64> {
    let n_pos = scores.iter().filter(|(_, y)| *y == positive_class).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if scores[k].1 == positive_class {
                pos_rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}
