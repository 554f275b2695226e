//! Long-term off-policy evaluation and learning.
//!
//! Estimates the long-term value of a target policy from historical logged
//! bandit feedback and short-term experiment data, without running a
//! long-term experiment. Ships five value estimators (AVG, LCI, IPS, DR,
//! LOPE), their policy-gradient counterparts for off-policy learning, a
//! synthetic benchmark environment, and an exactly enumerable tabular
//! environment used to verify every estimator identity numerically.
//!
//! Module map:
//!
//! - [`types`] — shared domain types (contexts, policies, datasets) and exact
//!   policy-value computation over finite populations.
//! - [`envs`] — the synthetic generative environment and the tabular oracle.
//! - [`models`] — self-contained nuisance estimators (ridge, softmax
//!   classifier, small MLP, k-means).
//! - [`estimators`] — the five value estimators plus surrogate-weight
//!   estimation.
//! - [`learners`] — policy-gradient estimators and the training loop.
//! - [`harness`] — replication sweeps, policy selection, learning benchmarks,
//!   and the exactness suite.

pub mod envs;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod learners;
pub mod models;
pub mod seeding;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    ActionSpace, ContextSet, EstimateReport, HistoricalDataset, HistoricalRecord,
    LongTermOutcomes, ShortTermDataset, ShortTermRecord, TabularPolicy,
};
