//! Prefix accuracies, cumulative mistake counts and the mistake-ratio series.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{what} has {got} entries, expected {expected}")]
    Length {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: usize,
    /// Accuracy of the first `t` steps, for every `t`.
    pub prefix_accuracy: Vec<f64>,
    pub cumulative_mistakes: Vec<u64>,
    pub baseline_cumulative_mistakes: Option<Vec<u64>>,
    /// Engine mistakes over baseline mistakes at each prefix; absent where
    /// the baseline has made no mistake yet.
    pub mistake_ratio: Option<Vec<Option<f64>>>,
    pub accuracy: Option<f64>,
    pub baseline_accuracy: Option<f64>,
    /// Accuracy restricted to the masked (e.g. relabeled) samples.
    pub masked_accuracy: Option<f64>,
    pub baseline_masked_accuracy: Option<f64>,
}

impl Metrics {
    pub fn final_ratio(&self) -> Option<f64> {
        self.mistake_ratio.as_ref().and_then(|r| r.last().copied().flatten())
    }
}

fn cumulative(correct: &[bool]) -> Vec<u64> {
    correct
        .iter()
        .scan(0u64, |acc, ok| {
            *acc += u64::from(!ok);
            Some(*acc)
        })
        .collect()
}

fn accuracy(correct: &[bool]) -> Option<f64> {
    (!correct.is_empty()).then(|| correct.iter().filter(|c| **c).count() as f64 / correct.len() as f64)
}

fn masked(correct: &[bool], mask: &[bool]) -> Option<f64> {
    let picked: Vec<bool> = correct.iter().zip(mask).filter(|(_, m)| **m).map(|(c, _)| *c).collect();
    accuracy(&picked)
}

pub fn compute_metrics(ours: &[bool], baseline: Option<&[bool]>, mask: Option<&[bool]>) -> Result<Metrics, MetricsError> {
    let n = ours.len();
    if let Some(b) = baseline {
        if b.len() != n {
            return Err(MetricsError::Length {
                what: "baseline",
                got: b.len(),
                expected: n,
            });
        }
    }
    if let Some(m) = mask {
        if m.len() != n {
            return Err(MetricsError::Length {
                what: "mask",
                got: m.len(),
                expected: n,
            });
        }
    }
    let mistakes = cumulative(ours);
    let prefix_accuracy = mistakes
        .iter()
        .enumerate()
        .map(|(i, m)| (i as u64 + 1 - m) as f64 / (i + 1) as f64)
        .collect();
    let baseline_mistakes = baseline.map(cumulative);
    let mistake_ratio = baseline_mistakes.as_ref().map(|b| {
        mistakes
            .iter()
            .zip(b)
            .map(|(o, f)| (*f > 0).then(|| *o as f64 / *f as f64))
            .collect()
    });
    Ok(Metrics {
        steps: n,
        prefix_accuracy,
        cumulative_mistakes: mistakes,
        baseline_cumulative_mistakes: baseline_mistakes,
        mistake_ratio,
        accuracy: accuracy(ours),
        baseline_accuracy: baseline.and_then(accuracy),
        masked_accuracy: mask.and_then(|m| masked(ours, m)),
        baseline_masked_accuracy: baseline.zip(mask).and_then(|(b, m)| masked(b, m)),
    })
}
