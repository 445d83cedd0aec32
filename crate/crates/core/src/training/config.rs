use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_LEARNING_RATES: [f64; 3] = [2e-5, 3e-5, 5e-5];
pub const GRID_EPOCHS: [usize; 5] = [2, 3, 5, 10, 15];
pub const GRID_BATCH_SIZES: [usize; 3] = [16, 32, 48];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Dropout in front of the classification layers.
    pub dropout: f64,
    /// Epochs between learning-rate decays.
    pub step_size: usize,
    /// Multiplicative decay applied every `step_size` epochs.
    pub gamma: f64,
    pub weight_decay: f64,
    pub use_class_weights: bool,
    /// Train on train+dev and keep the last epoch.
    pub merge_dev: bool,
    /// Keep the epoch with the best dev macro-F1 rather than the last.
    pub select_best: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: GRID_LEARNING_RATES[0],
            epochs: 5,
            batch_size: 32,
            dropout: 0.5,
            step_size: 3,
            gamma: 0.5,
            weight_decay: 0.01,
            use_class_weights: true,
            merge_dev: false,
            select_best: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.step_size == 0 {
            return Err(Error::Config("epochs, batch_size and step_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    /// Whether the three main axes sit on the standard fine-tuning grid.
    pub fn on_grid(&self) -> bool {
        GRID_LEARNING_RATES.contains(&self.learning_rate)
            && GRID_EPOCHS.contains(&self.epochs)
            && GRID_BATCH_SIZES.contains(&self.batch_size)
    }
}
