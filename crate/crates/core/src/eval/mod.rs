//! Metrics, comparison baselines and multi-seed scenario comparisons.

pub mod baselines;
pub mod compare;
pub mod metrics;

pub use baselines::{fit_baseline, run_baseline, BaselineKind, FittedBaseline, ItemClassifier};
pub use compare::{scenario_compare, Comparison, ModelSpec, OrderingCheck, RunRecord, Scenario, ScenarioFile, Verdict};
pub use metrics::{compute_metrics, Metric, MetricSet, UndefinedFlags};
