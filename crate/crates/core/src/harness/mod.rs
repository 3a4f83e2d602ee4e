//! Experiment drivers behind the CLI: comparison runs, benchmarks, the
//! invariant suite and the metrics they write.

pub mod bench;
pub mod check;
pub mod metrics;
pub mod runs;

pub use metrics::{MetricsSink, SCHEMA};
pub use runs::{ablate_pe, robustness, ExperimentConfig, RunCache, RunKey};
