use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, GRID_BATCH_SIZES, GRID_EPOCHS, GRID_LEARNING_RATES};
use crate::error::{Error, Result};

/// Axes of a full-factorial sweep. Every run is repeated once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub learning_rates: Vec<f64>,
    pub epochs: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for SweepGrid {
    /// The standard fine-tuning grid with a single seed.
    fn default() -> Self {
        Self {
            learning_rates: GRID_LEARNING_RATES.to_vec(),
            epochs: GRID_EPOCHS.to_vec(),
            batch_sizes: GRID_BATCH_SIZES.to_vec(),
            seeds: vec![0],
        }
    }
}

impl SweepGrid {
    /// Configurations in lr-major, then epochs, then batch-size order.
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &epochs in &self.epochs {
                for &batch_size in &self.batch_sizes {
                    out.push(TrainConfig {
                        learning_rate,
                        epochs,
                        batch_size,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }

    pub fn runs(&self) -> usize {
        self.learning_rates.len() * self.epochs.len() * self.batch_sizes.len() * self.seeds.len()
    }

    fn validate(&self) -> Result<()> {
        if self.runs() == 0 {
            return Err(Error::Config("sweep grid has an empty axis".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config_id: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dev_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConfig {
    pub config_id: usize,
    pub config: TrainConfig,
    pub mean_dev_macro_f1: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Best first; equal means keep grid order.
    pub ranking: Vec<RankedConfig>,
}

impl SweepReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("config_id,learning_rate,epochs,batch_size,seed,dev_macro_f1\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.config_id, r.learning_rate, r.epochs, r.batch_size, r.seed, r.dev_macro_f1
            ));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Run `evaluate` once per (config, seed) and rank configs by mean dev
/// macro-F1. Up to `jobs` runs execute concurrently; results are reported in
/// grid order regardless of completion order.
pub fn sweep<F>(grid: &SweepGrid, base: &TrainConfig, jobs: usize, evaluate: F) -> Result<SweepReport>
where
    F: Fn(&TrainConfig) -> Result<f64> + Sync,
{
    grid.validate()?;
    let configs = grid.configs(base);
    let tasks: Vec<(usize, TrainConfig)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            grid.seeds.iter().map(move |&seed| {
                (
                    i,
                    TrainConfig {
                        seed,
                        ..c.clone()
                    },
                )
            })
        })
        .collect();
    let results: Mutex<Vec<Option<Result<f64>>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let t = next.fetch_add(1, Ordering::Relaxed);
        let Some((_, cfg)) = tasks.get(t) else { break };
        let r = evaluate(cfg);
        results.lock().expect("sweep result lock")[t] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.max(1).min(tasks.len()) {
            s.spawn(worker);
        }
        worker();
    });

    let mut rows = Vec::with_capacity(tasks.len());
    for ((config_id, cfg), r) in tasks.iter().zip(results.into_inner().expect("sweep result lock")) {
        let score = r.expect("every task ran")?;
        rows.push(SweepRow {
            config_id: *config_id,
            learning_rate: cfg.learning_rate,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            dev_macro_f1: score,
        });
    }
    let mut scores: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        scores.entry(r.config_id).or_default().push(r.dev_macro_f1);
    }
    let mut ranking: Vec<RankedConfig> = scores
        .into_iter()
        .map(|(id, s)| RankedConfig {
            config_id: id,
            config: configs[id].clone(),
            mean_dev_macro_f1: s.iter().sum::<f64>() / s.len() as f64,
            runs: s.len(),
        })
        .collect();
    ranking.sort_by(|a, b| b.mean_dev_macro_f1.total_cmp(&a.mean_dev_macro_f1));
    Ok(SweepReport { rows, ranking })
}

/// Minimum number of seeds a reported result is averaged over.
pub const MIN_SEEDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub stdev: f64,
}

pub fn mean_std(xs: &[f64]) -> MeanStd {
    // Shifted-data form: deviations are taken from the first sample, so a
    // constant series gives an exact mean and a zero spread.
    let n = xs.len() as f64;
    let shift = xs.first().copied().unwrap_or(0.0);
    let s1: f64 = xs.iter().map(|x| x - shift).sum();
    let s2: f64 = xs.iter().map(|x| (x - shift).powi(2)).sum();
    let var = if xs.len() > 1 {
        ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    MeanStd {
        mean: shift + s1 / n,
        stdev: var.sqrt(),
    }
}

/// Run `run` with seeds `base_seed, base_seed + 1, …` (k of them) and
/// summarize every metric it returns.
pub fn multi_seed_average<F>(k: usize, base_seed: u64, run: F) -> Result<BTreeMap<String, MeanStd>>
where
    F: Fn(u64) -> Result<BTreeMap<String, f64>>,
{
    if k < MIN_SEEDS {
        return Err(Error::Config(format!(
            "results must be averaged over at least {MIN_SEEDS} seeds, got {k}"
        )));
    }
    let mut per_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for i in 0..k as u64 {
        for (name, v) in run(base_seed + i)? {
            per_metric.entry(name).or_default().push(v);
        }
    }
    Ok(per_metric.into_iter().map(|(n, v)| (n, mean_std(&v))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_has_45_configs() {
        assert_eq!(SweepGrid::default().configs(&TrainConfig::default()).len(), 45);
        assert_eq!(SweepGrid::default().runs(), 45);
    }

    #[test]
    fn ranking_matches_sort_oracle() {
        let grid = SweepGrid {
            learning_rates: vec![1e-3, 2e-3, 3e-3],
            epochs: vec![1, 2],
            batch_sizes: vec![8],
            seeds: vec![0, 1],
        };
        let score = |c: &TrainConfig| Ok((c.learning_rate * 1e3 * 7.0 + c.epochs as f64 * 3.0) % 5.0 + c.seed as f64 * 0.1);
        let rep = sweep(&grid, &TrainConfig::default(), 3, score).unwrap();
        assert_eq!(rep.rows.len(), 12);
        let mut oracle: Vec<(usize, f64)> = grid
            .configs(&TrainConfig::default())
            .iter()
            .enumerate()
            .map(|(i, c)| (i, (score(c).unwrap() * 2.0 + 0.1) / 2.0))
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let got: Vec<usize> = rep.ranking.iter().map(|r| r.config_id).collect();
        let want: Vec<usize> = oracle.iter().map(|o| o.0).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn singleton_grid() {
        let grid = SweepGrid {
            learning_rates: vec![1e-3],
            epochs: vec![1],
            batch_sizes: vec![4],
            seeds: vec![0],
        };
        let rep = sweep(&grid, &TrainConfig::default(), 4, |_| Ok(0.5)).unwrap();
        assert_eq!(rep.ranking.len(), 1);
        assert_eq!(rep.ranking[0].config_id, 0);
    }

    #[test]
    fn multi_seed_examples() {
        let scores = [0.7, 0.8, 0.9];
        let r = multi_seed_average(3, 10, |s| Ok(BTreeMap::from([("f1".to_string(), scores[(s - 10) as usize])]))).unwrap();
        assert!((r["f1"].mean - 0.8).abs() < 1e-12);
        assert!((r["f1"].stdev - 0.1).abs() < 1e-12);
        let flat = multi_seed_average(3, 0, |_| Ok(BTreeMap::from([("f1".to_string(), 0.8)]))).unwrap();
        assert_eq!(flat["f1"].stdev, 0.0);
        assert_eq!(multi_seed_average(2, 0, |_| Ok(BTreeMap::new())).unwrap_err().category(), "config");
    }
}
