//! Confusion matrices and macro-averaged precision, recall and F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are gold labels, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, gold: usize) -> u64 {
        self.counts[gold].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        self.counts.iter().map(|r| r[pred]).sum()
    }

    /// Matrix over `labels` built from raw counts.
    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        if k == 0 || counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Contract(format!(
                "confusion matrix must be {k}x{k}"
            )));
        }
        Ok(ConfusionMatrix { labels, counts })
    }
}

/// Counts `(gold, pred)` pairs over classes `0..labels.len()`.
pub fn confusion(gold: &[usize], pred: &[usize], labels: &[String]) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::Contract(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Contract("no examples to evaluate".into()));
    }
    let k = labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&g, &p) in gold.iter().zip(pred) {
        if g >= k || p >= k {
            return Err(Error::Contract(format!(
                "label pair ({g}, {p}) out of range for {k} classes"
            )));
        }
        counts[g][p] += 1;
    }
    ConfusionMatrix::from_counts(labels.to_vec(), counts)
}

/// Same as [`confusion`] with labels named `0..k`.
pub fn confusion_k(gold: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    let labels: Vec<String> = (0..k).map(|i| i.to_string()).collect();
    confusion(gold, pred, &labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: String,
    #[serde(flatten)]
    pub scores: Scores,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub n: u64,
    pub accuracy: f64,
    #[serde(rename = "macro")]
    pub macro_avg: Scores,
    pub per_class: Vec<ClassReport>,
}

impl EvalReport {
    pub fn class(&self, label: &str) -> Option<&Scores> {
        self.per_class
            .iter()
            .find(|c| c.label == label)
            .map(|c| &c.scores)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class P/R/F1 with zero denominators mapped to 0; macro values are
/// unweighted means over all classes, including ones absent from the data.
pub fn report(cm: &ConfusionMatrix, task: &str) -> EvalReport {
    let k = cm.k();
    let per_class: Vec<ClassReport> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let precision = ratio(tp, cm.col_sum(c));
            let recall = ratio(tp, cm.row_sum(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassReport {
                label: cm.labels[c].clone(),
                scores: Scores {
                    precision,
                    recall,
                    f1,
                },
                support: cm.row_sum(c),
            }
        })
        .collect();
    let mean = |f: fn(&Scores) -> f64| per_class.iter().map(|c| f(&c.scores)).sum::<f64>() / k as f64;
    let correct: u64 = (0..k).map(|c| cm.counts[c][c]).sum();
    EvalReport {
        task: task.to_string(),
        n: cm.total(),
        accuracy: ratio(correct, cm.total()),
        macro_avg: Scores {
            precision: mean(|s| s.precision),
            recall: mean(|s| s.recall),
            f1: mean(|s| s.f1),
        },
        per_class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_total_confusion() {
        assert_eq!(confusion_k(&[0, 1], &[0, 1], 2).unwrap().counts, vec![vec![1, 0], vec![0, 1]]);
        assert_eq!(confusion_k(&[0, 0], &[1, 1], 2).unwrap().counts, vec![vec![0, 2], vec![0, 0]]);
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        assert!(matches!(confusion_k(&[0, 1], &[0], 2), Err(Error::Contract(_))));
        assert!(confusion_k(&[0, 3], &[0, 1], 2).is_err());
    }

    #[test]
    fn identity_is_perfect() {
        let cm = confusion_k(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        let r = report(&cm, "x");
        assert_eq!(r.macro_avg, Scores { precision: 1.0, recall: 1.0, f1: 1.0 });
    }

    #[test]
    fn skewed_case_by_hand() {
        // 5 gold of each class, everything predicted as class 0.
        let gold: Vec<usize> = (0..10).map(|i| i / 5).collect();
        let cm = confusion_k(&gold, &[0; 10], 2).unwrap();
        let r = report(&cm, "hof");
        let c0 = r.per_class[0].scores;
        assert_eq!(c0.precision, 0.5);
        assert_eq!(c0.recall, 1.0);
        assert!((c0.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].scores, Scores::default());
        assert!((r.macro_avg.f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_counts_in_macro() {
        let cm = confusion_k(&[0, 1], &[0, 1], 3).unwrap();
        let r = report(&cm, "x");
        assert_eq!(r.per_class[2].scores, Scores::default());
        assert!((r.macro_avg.f1 - 2.0 / 3.0).abs() < 1e-15);
    }
}
