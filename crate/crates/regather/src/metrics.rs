//! Classification metrics and multi-trial aggregation.
//!
//! Macro-F1 is the unweighted mean of per-class F1 scores; Micro-F1 pools
//! confusion counts over classes, which for single-label multiclass
//! prediction makes it equal to plain accuracy. Scores are percentages.
//! Trial aggregates report mean and sample (n−1) standard deviation; a
//! single trial has no deviation rather than a zero one.

use std::fmt::Write as _;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum MetricsError {
    #[error("prediction and truth lengths differ ({pred} vs {truth})")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("class id {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("no values to evaluate")]
    Empty,
}

/// Per-class true-positive / false-positive / false-negative tallies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

/// Confusion tallies for one prediction set.
#[derive(Clone, Debug)]
pub struct ConfusionCounts {
    classes: Vec<ClassCounts>,
    total: usize,
}

impl ConfusionCounts {
    /// Tally single-label predictions against ground truth.
    pub fn tally(
        truth: &[usize],
        pred: &[usize],
        num_classes: usize,
    ) -> Result<Self, MetricsError> {
        if truth.len() != pred.len() {
            return Err(MetricsError::LengthMismatch {
                pred: pred.len(),
                truth: truth.len(),
            });
        }
        if truth.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut classes = vec![
            ClassCounts {
                true_pos: 0,
                false_pos: 0,
                false_neg: 0
            };
            num_classes
        ];
        for (&t, &p) in truth.iter().zip(pred) {
            for class in [t, p] {
                if class >= num_classes {
                    return Err(MetricsError::ClassOutOfRange {
                        class,
                        num_classes,
                    });
                }
            }
            if t == p {
                classes[t].true_pos += 1;
            } else {
                classes[p].false_pos += 1;
                classes[t].false_neg += 1;
            }
        }
        Ok(Self {
            classes,
            total: truth.len(),
        })
    }

    pub fn classes(&self) -> &[ClassCounts] {
        &self.classes
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Macro and micro F1, both as percentages in [0, 100].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub micro_f1: f64,
}

fn f1_from(tp: usize, fp: usize, fn_count: usize) -> f64 {
    // Harmonic mean of precision and recall; a class with no support and
    // no predictions has undefined F1 and conservatively counts as 0.
    let denom = 2 * tp + fp + fn_count;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Macro/micro F1 of single-label predictions over `num_classes` classes.
pub fn f1_scores(
    truth: &[usize],
    pred: &[usize],
    num_classes: usize,
) -> Result<F1Scores, MetricsError> {
    let counts = ConfusionCounts::tally(truth, pred, num_classes)?;
    Ok(f1_of_counts(&counts))
}

/// Macro/micro F1 from pre-tallied confusion counts.
pub fn f1_of_counts(counts: &ConfusionCounts) -> F1Scores {
    let per_class: Vec<f64> = counts
        .classes()
        .iter()
        .map(|c| f1_from(c.true_pos, c.false_pos, c.false_neg))
        .collect();
    let macro_f1 = 100.0 * per_class.iter().sum::<f64>() / per_class.len().max(1) as f64;
    let (tp, fp, fn_count) = counts.classes().iter().fold((0, 0, 0), |acc, c| {
        (
            acc.0 + c.true_pos,
            acc.1 + c.false_pos,
            acc.2 + c.false_neg,
        )
    });
    let micro_f1 = 100.0 * f1_from(tp, fp, fn_count);
    F1Scores { macro_f1, micro_f1 }
}

/// Mean and sample standard deviation over repeated trials of one metric.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrialAggregate {
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Absent (not zero) when only one trial ran.
    pub std: Option<f64>,
}

/// Aggregate per-trial metric values into mean ± sample std.
pub fn aggregate(metric: &str, values: &[f64]) -> Result<TrialAggregate, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| {
        let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        (ss / (n - 1.0)).sqrt()
    });
    Ok(TrialAggregate {
        metric: metric.to_string(),
        values: values.to_vec(),
        mean,
        std,
    })
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub train_size: String,
    pub metric: String,
    pub mean: f64,
    pub std: Option<f64>,
}

impl ResultRow {
    pub fn from_aggregate(dataset: &str, train_size: &str, agg: &TrialAggregate) -> Self {
        Self {
            dataset: dataset.to_string(),
            train_size: train_size.to_string(),
            metric: agg.metric.clone(),
            mean: agg.mean,
            std: agg.std,
        }
    }

    fn score(&self) -> String {
        match self.std {
            Some(s) => format!("{:.2} ± {:.2}", self.mean, s),
            None => format!("{:.2}", self.mean),
        }
    }
}

/// Render rows as an aligned text table.
pub fn render_table(rows: &[ResultRow]) -> String {
    let header = ["dataset", "train size", "metric", "score"];
    let mut cells: Vec<[String; 4]> = vec![header.map(str::to_string)];
    for r in rows {
        cells.push([
            r.dataset.clone(),
            r.train_size.clone(),
            r.metric.clone(),
            r.score(),
        ]);
    }
    let mut widths = [0usize; 4];
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", rule.join("  "));
        }
    }
    out
}

/// Render rows as machine-readable tab-separated lines:
/// dataset, train size, metric, mean, std (empty when absent).
pub fn machine_rows(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let std = r.std.map(|s| format!("{s:.4}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.4}\t{}",
            r.dataset, r.train_size, r.metric, r.mean, std
        );
    }
    out
}
