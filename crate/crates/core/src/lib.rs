//! Offline placement and cycle-level simulation of embedding reduction on
//! ReRAM crossbar arrays.
//!
//! The pipeline runs trace -> co-occurrence graph -> grouping -> replica
//! allocation -> batched simulation -> comparison.

pub mod allocation;
pub mod cooccur;
pub mod experiment;
pub mod grouping;
pub mod hwmodel;
pub mod sim;
pub mod trace;

pub use allocation::{
    allocate, compute_copies, copy_stats, placement_stats, proportional_copies, route_query,
    AllocError, AllocOptions, PlacementPlan, PlacementStats,
};
pub use cooccur::{build_cooccurrence, CoOccurrenceGraph, GraphError};
pub use experiment::{
    emit_figure_data, run_experiment, run_pipeline, ExperimentConfig, ExperimentError,
    ExperimentOutcome, RunRecord, Stage,
};
pub use grouping::{
    group_correlation_aware, group_frequency, group_naive, validate_grouping, GroupingPlan,
    GroupingViolation, Strategy, WeightTarget,
};
pub use hwmodel::{CostConfig, EnergyModel, HardwareConfig, HwError, Mode};
pub use sim::{
    compare_runs, comparison_csv, simulate_batch, simulate_trace, ComparisonRow, ExecMode,
    SimConfig, SimError, SimReport,
};
pub use trace::{
    generate_synthetic, parse_trace, split_trace, trace_stats, write_trace, GeneratorParams,
    ItemId, Query, Trace, TraceError, TraceStats,
};
