//! Evaluation bookkeeping: score tables, per-benchmark max normalization,
//! VA/LCA aggregates, deltas against a base model, run-to-run variance and
//! response length statistics.

mod aggregate;
mod length;
mod table;

pub use aggregate::{
    aggregate, aggregate_deltas, deltas, normalize_scores, population_std, run_aggregate_variance, run_variance,
    AggregateConfig, AggregateDelta, DeltaTable, MmlbCombine, ModelAggregate, RunVariance, StatsError,
};
pub use length::{has_think_block, length_stats, mean_ratio, Histogram, LengthStats};
pub use table::{ScoreTable, TableError};
