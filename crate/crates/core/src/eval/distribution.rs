use std::path::Path;

use crate::error::{Error, Result};
use crate::text::{Dataset, LabelSchema, Subtask};

#[derive(Debug, Clone, PartialEq)]
pub struct SubtaskDistribution {
    pub subtask: Subtask,
    pub labels: Vec<String>,
    pub counts: Vec<usize>,
    /// Largest over smallest class count; infinite when some class is empty.
    pub imbalance_ratio: f64,
}

impl SubtaskDistribution {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn imbalance_ratio(counts: &[usize]) -> f64 {
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    if min == 0 {
        f64::INFINITY
    } else {
        max as f64 / min as f64
    }
}

pub fn label_distribution(dataset: &Dataset, schema: &LabelSchema) -> Vec<SubtaskDistribution> {
    Subtask::ALL
        .iter()
        .map(|&s| {
            let counts = dataset.counts().for_subtask(s).to_vec();
            SubtaskDistribution {
                subtask: s,
                labels: schema.labels(s).to_vec(),
                imbalance_ratio: imbalance_ratio(&counts),
                counts,
            }
        })
        .collect()
}

/// `subtask,class_id,label,count,share,imbalance_ratio`, one row per class.
pub fn write_distribution_csv(dist: &[SubtaskDistribution], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["subtask", "class_id", "label", "count", "share", "imbalance_ratio"])
        .map_err(|e| csv_err(path, e))?;
    for d in dist {
        let total = d.total();
        let ratio = if d.imbalance_ratio.is_finite() {
            format!("{}", d.imbalance_ratio)
        } else {
            "inf".to_string()
        };
        for (i, (label, &n)) in d.labels.iter().zip(&d.counts).enumerate() {
            let share = if total == 0 { 0.0 } else { n as f64 / total as f64 };
            w.write_record([
                d.subtask.as_str(),
                &i.to_string(),
                label,
                &n.to_string(),
                &format!("{share}"),
                &ratio,
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Input(format!("{}: {other:?}", path.display())),
    }
}
