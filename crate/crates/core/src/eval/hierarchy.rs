use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{LabelSchema, Subtask};

/// Predictions for one example across the three levels. B and C are absent
/// when the pipeline did not route the example past the binary level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelPredictions<'a> {
    pub a: &'a [(String, usize)],
    pub b: &'a [(String, Option<usize>)],
    pub c: &'a [(String, Option<usize>)],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyReport {
    pub examples: usize,
    /// Share of examples whose B/C predictions exist only when A is positive.
    pub gating: f64,
    /// Share of examples with both B and C predicted where the vector's
    /// parent is the predicted category.
    pub parent_match: f64,
    pub parent_pairs: usize,
    pub warnings: Vec<String>,
}

pub fn hierarchy_consistency(preds: &LevelPredictions<'_>, schema: &LabelSchema) -> Result<HierarchyReport> {
    let n = preds.a.len();
    if preds.b.len() != n || preds.c.len() != n {
        return Err(Error::Input(format!(
            "prediction sets have {n}, {} and {} rows",
            preds.b.len(),
            preds.c.len()
        )));
    }
    let mut gated = 0usize;
    let (mut pairs, mut matched) = (0usize, 0usize);
    for (i, ((ia, a), ((ib, b), (ic, c)))) in preds.a.iter().zip(preds.b.iter().zip(preds.c)).enumerate() {
        if ia != ib || ia != ic {
            return Err(Error::Input(format!("row {i}: ids `{ia}`, `{ib}`, `{ic}` are misaligned")));
        }
        if let Some(c) = c {
            if *c >= Subtask::C.arity() {
                return Err(Error::Input(format!("row {i}: vector {c} out of range")));
            }
        }
        if (b.is_none() && c.is_none()) || *a == schema.positive() {
            gated += 1;
        }
        if let (Some(b), Some(c)) = (b, c) {
            pairs += 1;
            if schema.parent(*c) == *b {
                matched += 1;
            }
        }
    }
    let mut warnings = Vec::new();
    if n == 0 {
        warnings.push("no predictions: consistency is vacuous".to_string());
    } else if pairs == 0 {
        warnings.push("no example has both B and C predictions: parent match is vacuous".to_string());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let share = |k: usize, d: usize| if d == 0 { 1.0 } else { k as f64 / d as f64 };
    Ok(HierarchyReport {
        examples: n,
        gating: share(gated, n),
        parent_match: share(matched, pairs),
        parent_pairs: pairs,
        warnings,
    })
}

/// Parent-match rate of independent uniform B and C guesses.
pub fn random_parent_match(schema: &LabelSchema) -> f64 {
    let (nb, nc) = (Subtask::B.arity() as f64, Subtask::C.arity() as f64);
    (0..Subtask::B.arity())
        .map(|b| schema.children(b).len() as f64 / nc / nb)
        .sum()
}
