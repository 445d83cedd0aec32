//! Classification metrics, hierarchy checks and report files.

pub mod distribution;
pub mod hierarchy;
pub mod metrics;
pub mod report;

pub use distribution::{imbalance_ratio, label_distribution, write_distribution_csv, SubtaskDistribution};
pub use hierarchy::{hierarchy_consistency, random_parent_match, HierarchyReport, LevelPredictions};
pub use metrics::{confusion_matrix, macro_f1, precision_recall_f1, ClassMetrics, ConfusionMatrix, Metrics};
pub use report::{confusion_svg, emit_report, read_report, EvalReport, ReportFormat, RunMeta};
