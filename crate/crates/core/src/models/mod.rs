//! Self-contained statistical primitives used as nuisance estimators.
//!
//! Fitting is single-threaded per model; fitted models are immutable and
//! shareable. Parallelism happens one level up, never inside a fit.

mod kmeans;
mod mlp;
mod ridge;
mod softmax;

pub use kmeans::{kmeans, KMeansOutcome};
pub use mlp::{Mlp, MlpConfig, MlpRegressor};
pub use ridge::{fit_ridge, RidgeModel};
pub use softmax::{fit_softmax_classifier, SoftmaxClassifier, SoftmaxConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which regressor family backs a fitted reward model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RegressorKind {
    Ridge { l2: f64 },
    Mlp { config: MlpConfig },
}

impl Default for RegressorKind {
    fn default() -> Self {
        RegressorKind::Ridge { l2: 1.0 }
    }
}

/// A fitted regressor of either family, dispatched by enum so fitted models
/// stay plain serializable data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FittedRegressor {
    Ridge(RidgeModel),
    Mlp(MlpRegressor),
}

impl FittedRegressor {
    pub fn predict(&self, features: &[f64]) -> f64 {
        match self {
            FittedRegressor::Ridge(m) => m.predict(features),
            FittedRegressor::Mlp(m) => m.predict(features),
        }
    }

    /// A regressor that predicts 0 for every input.
    pub fn zero(dim_in: usize) -> Self {
        FittedRegressor::Ridge(RidgeModel::constant(dim_in, 0.0))
    }

    /// A regressor that predicts `c` for every input.
    pub fn constant(dim_in: usize, c: f64) -> Self {
        FittedRegressor::Ridge(RidgeModel::constant(dim_in, c))
    }

    pub fn fit(
        kind: &RegressorKind,
        x: &[Vec<f64>],
        y: &[f64],
        seed: u64,
    ) -> Result<FittedRegressor> {
        match kind {
            RegressorKind::Ridge { l2 } => Ok(FittedRegressor::Ridge(fit_ridge(x, y, *l2)?)),
            RegressorKind::Mlp { config } => {
                Ok(FittedRegressor::Mlp(MlpRegressor::fit(x, y, config, seed)?))
            }
        }
    }
}

pub(crate) fn check_rows(x: &[Vec<f64>], y_len: usize, what: &'static str) -> Result<usize> {
    if x.is_empty() || y_len == 0 {
        return Err(Error::EmptyDataset(what));
    }
    if x.len() != y_len {
        return Err(Error::DimensionMismatch {
            context: what,
            expected: x.len(),
            actual: y_len,
        });
    }
    let dim = x[0].len();
    for row in x {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                context: what,
                expected: dim,
                actual: row.len(),
            });
        }
    }
    Ok(dim)
}
