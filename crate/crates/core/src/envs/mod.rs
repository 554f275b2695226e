//! Generative environments.
//!
//! [`synthetic`] is the continuous benchmark environment with a tunable
//! surrogacy violation; [`tabular`] is a small, fully enumerable environment
//! with discrete surrogates used as the exactness oracle for every estimator
//! identity.

pub mod synthetic;
pub mod tabular;

pub use synthetic::{build_synthetic_env, SyntheticEnv, SyntheticEnvConfig, SyntheticEnvParams};
pub use tabular::{RewardLaw, TabularEnv};
