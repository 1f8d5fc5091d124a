//! Configuration, seed sweeps, and the metric files they produce.

mod config;
mod metrics;
mod sweep;

pub use config::RunConfig;
pub use metrics::{
    aggregate, auc_improvement, emit_plot_data, final_window, mean_std, read_aggregate, read_metrics, read_plot_data,
    write_aggregate, write_metrics, AggregateRow, IterationAccumulator, IterationMetrics, WindowSummary,
    AGGREGATE_HEADER, METRICS_HEADER,
};
pub use sweep::{aggregate_path, run_seed, run_sweep, seed_metrics_path, SweepOutcome};
