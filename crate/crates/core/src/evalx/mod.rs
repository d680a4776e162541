//! Inference, metrics and reporting.

pub mod infer;
pub mod metrics;
pub mod report;

pub use metrics::{asd, dice_score, hausdorff, hausdorff95};
pub use report::{cumulative_histogram, CaseMetrics, CaseStatus, HistMetric, HistTable, MeanStd, MetricsReport};
