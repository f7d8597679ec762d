//! Downstream evaluation and the experiment grid runner.

mod experiment;
mod metrics;

pub use experiment::*;
pub use metrics::{metrics, Averaging, ClassMetrics, MetricsReport};
