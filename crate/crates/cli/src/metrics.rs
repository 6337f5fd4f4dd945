use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Per-window ground truth: a window is anomalous if any of its samples is.
pub fn label_windows(labels: &[u8], window: usize, stride: usize) -> Vec<u8> {
    if labels.len() < window || stride == 0 {
        return Vec::new();
    }
    (0..=labels.len() - window)
        .step_by(stride)
        .map(|s| labels[s..s + window].iter().any(|&l| l != 0) as u8)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RunMetrics {
    pub fn windows(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Share of truly normal windows flagged.
    pub fn false_alarm_rate(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn compute_metrics(predicted: &[u8], truth: &[u8]) -> Result<RunMetrics> {
    if predicted.len() != truth.len() {
        return Err(CliError::usage(format!("{} predictions for {} labeled windows", predicted.len(), truth.len())));
    }
    let mut m = RunMetrics::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, true) => m.fn_ += 1,
            (false, false) => m.tn += 1,
        }
    }
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn_);
    m.f1 = if m.precision + m.recall == 0.0 { 0.0 } else { 2.0 * m.precision * m.recall / (m.precision + m.recall) };
    Ok(m)
}
