use std::collections::BTreeMap;

use super::dataset::LabeledRow;
use super::schema::Subtask;
use crate::error::{Error, Result};
use crate::rng::SeedRng;

/// 70/10/20 train/dev/test.
pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.1, 0.2];

#[derive(Debug, Clone, Default)]
pub struct SplitOutcome {
    pub train: Vec<LabeledRow>,
    pub dev: Vec<LabeledRow>,
    pub test: Vec<LabeledRow>,
    pub warnings: Vec<String>,
}

/// Stratified split on the `stratify_on` label (rows lacking that label
/// form their own stratum). Each stratum is shuffled with a stream derived
/// from `seed` and its key, then cut at `round(n·r_train)` and
/// `round(n·r_dev)`, so every per-class split size is within one example of
/// exact. Strata smaller than the number of splits go entirely to train.
pub fn split_dataset(rows: &[LabeledRow], ratios: [f64; 3], seed: u64, stratify_on: Subtask) -> Result<SplitOutcome> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("split ratios must be non-negative and sum to 1, got {ratios:?}")));
    }
    let mut strata: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        strata.entry(r.label(stratify_on)).or_default().push(i);
    }
    let root = SeedRng::new(seed);
    let mut assign = vec![0u8; rows.len()];
    let mut warnings = Vec::new();
    for (key, mut idx) in strata {
        let n = idx.len();
        if n < ratios.len() {
            warnings.push(format!(
                "class {} has only {n} rows; placing all of them in train",
                key.map_or("<none>".to_string(), |k| k.to_string())
            ));
            continue;
        }
        root.fork(key.map_or(u64::MAX, |k| k as u64)).shuffle(&mut idx);
        let n_train = (n as f64 * ratios[0]).round() as usize;
        let n_dev = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
        for (pos, &i) in idx.iter().enumerate() {
            assign[i] = if pos < n_train {
                0
            } else if pos < n_train + n_dev {
                1
            } else {
                2
            };
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut out = SplitOutcome {
        warnings,
        ..Default::default()
    };
    for (r, a) in rows.iter().zip(assign) {
        match a {
            0 => out.train.push(r.clone()),
            1 => out.dev.push(r.clone()),
            _ => out.test.push(r.clone()),
        }
    }
    Ok(out)
}
