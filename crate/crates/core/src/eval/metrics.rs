use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts with rows = gold class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold][pred]
    }

    /// For a binary matrix with class 1 positive: gold positive predicted negative.
    pub fn false_negatives(&self) -> u64 {
        self.counts[1][0]
    }

    pub fn false_positives(&self) -> u64 {
        self.counts[0][1]
    }
}

/// Tally `(gold, pred)` pairs. Labels default to the class indices.
pub fn confusion_matrix(preds: &[usize], golds: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != golds.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if classes == 0 {
        return Err(Error::Input("confusion matrix needs at least one class".into()));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= classes || g >= classes {
            return Err(Error::Input(format!("label {} out of range for {classes} classes", p.max(g))));
        }
        counts[g][p] += 1;
    }
    Ok(ConfusionMatrix {
        labels: (0..classes).map(|c| c.to_string()).collect(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// `a / b`, with 0/0 taken as 0.
fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub fn precision_recall_f1(cm: &ConfusionMatrix) -> Metrics {
    let m = cm.classes();
    let mut per_class = Vec::with_capacity(m);
    let mut correct = 0u64;
    for c in 0..m {
        let tp = cm.counts[c][c];
        let predicted: u64 = (0..m).map(|g| cm.counts[g][c]).sum();
        let gold: u64 = cm.counts[c].iter().sum();
        correct += tp;
        let p = ratio(tp as f64, predicted as f64);
        let r = ratio(tp as f64, gold as f64);
        per_class.push(ClassMetrics {
            label: cm.labels[c].clone(),
            precision: p,
            recall: r,
            f1: ratio(2.0 * p * r, p + r),
            support: gold,
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / m as f64;
    Metrics {
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        accuracy: ratio(correct as f64, cm.total() as f64),
        per_class,
    }
}

pub fn macro_f1(preds: &[usize], golds: &[usize], classes: usize) -> Result<f64> {
    Ok(precision_recall_f1(&confusion_matrix(preds, golds, classes)?).macro_f1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_matrix() {
        let cm = confusion_matrix(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
        let m = precision_recall_f1(&cm);
        assert_eq!(m.per_class[0].precision, 1.0);
        assert_eq!(m.per_class[0].recall, 0.5);
        assert!((m.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.per_class[1].precision, 0.5);
        assert_eq!(m.per_class[1].recall, 1.0);
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 3, 3];
        let cm = confusion_matrix(&y, &y, 4).unwrap();
        for (i, row) in cm.counts.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v == 0, i != j || y.iter().all(|&g| g != i));
            }
        }
        let m = precision_recall_f1(&cm);
        assert_eq!((m.macro_f1, m.accuracy), (1.0, 1.0));
    }

    #[test]
    fn absent_class_scores_zero() {
        let m = precision_recall_f1(&confusion_matrix(&[0, 1], &[0, 1], 3).unwrap());
        assert_eq!(m.per_class[2].f1, 0.0);
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_input_error() {
        assert_eq!(confusion_matrix(&[0], &[0, 1], 2).unwrap_err().category(), "input");
    }
}
