//! Configuration, training runs, sweeps and bound checks.

mod bounds;
mod config;
mod run;
mod sweep;

pub use bounds::{
    adaptive_step_rhs, check_adaptive_bound, check_clipped_bound, check_masked_bound, clipped_bound_rhs,
    masked_bound_rhs, AdaptiveBoundConfig, BoundReport, ClippedBoundConfig, MaskedBoundConfig, QuadraticProblem,
    BOUND_SLACK,
};
pub use config::{DatasetKind, Optimizer, RunConfig, SigmaSource, KEYS};
pub use run::{
    accuracy, load_datasets, read_metrics, resolve_sigma, run_experiment, run_on, MetricsLine, MetricsRecord,
    RunHeader, RunOutcome, RunSummary, STREAM_INIT, STREAM_NOISE, STREAM_SAMPLER,
};
pub use sweep::{median_by_value, sweep, to_csv_string, write_csv, SeedPolicy, SweepAxis, SweepRow};
