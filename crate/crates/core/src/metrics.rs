//! Token-level precision, recall, and F1 for the SHELL class.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{round2, Corpus, Label};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("gold and prediction shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("percentage {0} outside [0, 100]")]
    OutOfRange(f64),
    #[error("token missing a {0} label")]
    MissingLabel(&'static str),
}

/// Confusion counts with SHELL as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_positives + self.false_positives + self.false_negatives + self.true_negatives
    }

    fn observe(&mut self, gold: Label, pred: Label) {
        match (gold, pred) {
            (Label::Shell, Label::Shell) => self.true_positives += 1,
            (Label::O, Label::Shell) => self.false_positives += 1,
            (Label::Shell, Label::O) => self.false_negatives += 1,
            (Label::O, Label::O) => self.true_negatives += 1,
        }
    }

    /// Counts over a corpus that carries both gold and predicted labels.
    pub fn from_corpus(corpus: &Corpus) -> Result<ConfusionCounts, MetricsError> {
        let mut counts = ConfusionCounts::default();
        for token in corpus.tokens() {
            let gold = token.gold_label.ok_or(MetricsError::MissingLabel("gold"))?;
            let pred = token
                .predicted_label
                .ok_or(MetricsError::MissingLabel("predicted"))?;
            counts.observe(gold, pred);
        }
        Ok(counts)
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, other: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            true_positives: self.true_positives + other.true_positives,
            false_positives: self.false_positives + other.false_positives,
            false_negatives: self.false_negatives + other.false_negatives,
            true_negatives: self.true_negatives + other.true_negatives,
        }
    }
}

/// Per-token confusion counts over parallel gold/predicted label sequences.
pub fn count_confusion(
    gold: &[Vec<Label>],
    pred: &[Vec<Label>],
) -> Result<ConfusionCounts, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} gold sequences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut counts = ConfusionCounts::default();
    for (idx, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(MetricsError::ShapeMismatch(format!(
                "sequence {idx}: {} gold labels vs {} predicted",
                g.len(),
                p.len()
            )));
        }
        for (&gl, &pl) in g.iter().zip(p) {
            counts.observe(gl, pl);
        }
    }
    Ok(counts)
}

/// Precision, recall, and F1 as percentages in `[0, 100]`. Values are exact
/// doubles; rounding to two decimals happens at display time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision/recall/F1 from confusion counts; each ratio is 0 when its
/// denominator is 0.
pub fn prf_from_counts(c: &ConfusionCounts) -> Metrics {
    let pct = |num: u64, den: u64| {
        if den == 0 {
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    };
    let precision = pct(c.true_positives, c.true_positives + c.false_positives);
    let recall = pct(c.true_positives, c.true_positives + c.false_negatives);
    let f1 = f1_from_pr(precision, recall).expect("precision and recall are in range");
    Metrics {
        precision,
        recall,
        f1,
    }
}

/// Harmonic mean of a precision/recall pair of percentages; 0 when both are 0.
pub fn f1_from_pr(precision: f64, recall: f64) -> Result<f64, MetricsError> {
    for v in [precision, recall] {
        if !(0.0..=100.0).contains(&v) {
            return Err(MetricsError::OutOfRange(v));
        }
    }
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P {:.2}% / R {:.2}% / F1 {:.2}%",
            round2(self.precision),
            round2(self.recall),
            round2(self.f1)
        )
    }
}

impl Metrics {
    /// Machine-readable key/value lines for reports.
    pub fn report_lines(&self, counts: &ConfusionCounts) -> Vec<String> {
        vec![
            format!("tp={}", counts.true_positives),
            format!("fp={}", counts.false_positives),
            format!("fn={}", counts.false_negatives),
            format!("tn={}", counts.true_negatives),
            format!("precision={:.2}", round2(self.precision)),
            format!("recall={:.2}", round2(self.recall)),
            format!("f1={:.2}", round2(self.f1)),
        ]
    }
}
