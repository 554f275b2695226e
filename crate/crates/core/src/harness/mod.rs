//! Experiment orchestration: evaluation sweeps, policy-selection accuracy,
//! learning benchmarks, and the enumeration-based exactness suite.
//!
//! Replications are independent tasks keyed by (cell, replication index);
//! they may run in parallel but are always aggregated in index order, so
//! results are bit-stable for any worker count.

pub mod opl;
pub mod selection;
pub mod svg;
pub mod sweep;
pub mod theorems;

pub use opl::{run_opl_experiment, LearnerKind, OplConfig, OplReport, OplRow};
pub use selection::{run_selection_experiment, SelectionConfig, SelectionReport, SelectionRow};
pub use svg::{line_chart, Series};
pub use sweep::{
    aggregate_errors, run_evaluation_sweep, MetricRow, SweepConfig, SweepReport, SweptParameter,
};
pub use theorems::{run_theorem_suite, TheoremCheck, TheoremSuiteReport};
