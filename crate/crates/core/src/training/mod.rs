//! Class-weighted loss, AdamW with step decay, the training loop and sweeps.

pub mod config;
pub mod loss;
pub mod optim;
pub mod sweep;
pub mod trainer;

pub use config::{TrainConfig, GRID_BATCH_SIZES, GRID_EPOCHS, GRID_LEARNING_RATES};
pub use loss::{class_weights, weighted_cross_entropy, ClassWeights};
pub use optim::{step_decay_lr, AdamW, AdamWConfig};
pub use sweep::{mean_std, multi_seed_average, sweep, MeanStd, RankedConfig, SweepGrid, SweepReport, SweepRow, MIN_SEEDS};
pub use trainer::{fit, label_counts, labeled_pairs, train_encoder, Classifier, EpochRecord, RunHistory};
