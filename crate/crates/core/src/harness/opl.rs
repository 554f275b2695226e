//! Off-policy learning benchmark: train a policy with each gradient
//! estimator plus the regression-based baseline, then score the learned
//! policies by their exact long-term value.

use serde::{Deserialize, Serialize};

use crate::envs::{build_synthetic_env, SyntheticEnvConfig};
use crate::error::{Error, Result};
use crate::learners::{
    reg_based_policy, train_policy, GradientEstimatorKind, LearnerConfig,
};
use crate::seeding::derive_seed;

use super::svg::{line_chart, Series};
use super::sweep::{apply_swept, run_parallel, SweptParameter};

/// The learning methods compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    IpsPg,
    DrPg,
    LopePg,
    RegBased,
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            LearnerKind::IpsPg => "ips_pg",
            LearnerKind::DrPg => "dr_pg",
            LearnerKind::LopePg => "lope_pg",
            LearnerKind::RegBased => "reg_based",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OplConfig {
    pub swept_parameter: SweptParameter,
    pub grid: Vec<f64>,
    #[serde(default = "d_replications")]
    pub replications: usize,
    /// Historical sample size when `n` is not the swept parameter. Only
    /// historical data exists here: learning happens before any experiment
    /// can run.
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default)]
    pub env: SyntheticEnvConfig,
    #[serde(default = "d_learners")]
    pub learners: Vec<LearnerKind>,
    /// Shared training hyperparameters; the gradient estimator field is
    /// overridden per learner.
    #[serde(default = "d_learner_cfg")]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_workers")]
    pub workers: usize,
}

fn d_replications() -> usize {
    50
}
fn d_n() -> usize {
    500
}
fn d_workers() -> usize {
    1
}
fn d_learners() -> Vec<LearnerKind> {
    vec![
        LearnerKind::IpsPg,
        LearnerKind::DrPg,
        LearnerKind::LopePg,
        LearnerKind::RegBased,
    ]
}
fn d_learner_cfg() -> LearnerConfig {
    LearnerConfig::new(GradientEstimatorKind::LopePg)
}

impl OplConfig {
    pub fn new(swept_parameter: SweptParameter, grid: Vec<f64>) -> Self {
        Self {
            swept_parameter,
            grid,
            replications: d_replications(),
            n: d_n(),
            env: SyntheticEnvConfig::default(),
            learners: d_learners(),
            learner: d_learner_cfg(),
            seed: 0,
            workers: d_workers(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("learning grid is empty".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("need at least 1 replication".into()));
        }
        if self.learners.is_empty() {
            return Err(Error::InvalidConfig("no learners selected".into()));
        }
        self.learner.validate()?;
        self.env.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OplRow {
    pub learner: String,
    pub parameter_value: f64,
    /// Mean exact value of the learned policies.
    pub mean_value: f64,
    /// Mean value normalized by the LOPE-PG mean in the same cell.
    pub relative_to_lope_pg: f64,
    pub n_replications: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OplReport {
    pub swept_parameter: String,
    pub rows: Vec<OplRow>,
}

impl OplReport {
    pub fn row(&self, learner: LearnerKind, value: f64) -> Option<&OplRow> {
        let name = learner.to_string();
        self.rows
            .iter()
            .find(|r| r.learner == name && (r.parameter_value - value).abs() < 1e-12)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["learner", "param", "mean_value", "relative_to_lope_pg", "R"])?;
        for r in &self.rows {
            wtr.write_record([
                r.learner.clone(),
                format!("{}", r.parameter_value),
                format!("{:.17e}", r.mean_value),
                format!("{:.17e}", r.relative_to_lope_pg),
                format!("{}", r.n_replications),
            ])?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf8"))
    }

    pub fn to_svg(&self) -> String {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.learner) {
                names.push(r.learner.clone());
            }
        }
        let series: Vec<Series> = names
            .into_iter()
            .map(|name| Series {
                points: self
                    .rows
                    .iter()
                    .filter(|r| r.learner == name)
                    .map(|r| (r.parameter_value, r.relative_to_lope_pg))
                    .collect(),
                name,
            })
            .collect();
        line_chart(
            "Learned policy value relative to lope_pg",
            &self.swept_parameter,
            "relative value",
            &series,
            false,
        )
    }
}

/// Per replication: draw historical data, train every learner on it, and
/// evaluate the learned policies exactly. Mean values are reported relative
/// to LOPE-PG's mean.
pub fn run_opl_experiment(cfg: &OplConfig) -> Result<OplReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (cell, &value) in cfg.grid.iter().enumerate() {
        let (env_cfg, n) = apply_swept(&cfg.env, cfg.swept_parameter, value, cfg.n);
        env_cfg
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("grid value {value} is invalid: {e}")))?;
        let learners = cfg.learners.clone();
        let outputs = run_parallel(cfg.workers, cfg.replications, |rep| {
            run_one(cfg, &env_cfg, n, &learners, cell as u64, rep)
        });

        // Mean exact value per learner.
        let mut means = vec![0.0; learners.len()];
        let mut counts = vec![0usize; learners.len()];
        let mut failures = vec![0usize; learners.len()];
        for out in &outputs {
            match out {
                Ok(values) => {
                    for (i, v) in values.iter().enumerate() {
                        match v {
                            Ok(val) => {
                                means[i] += val;
                                counts[i] += 1;
                            }
                            Err(_) => failures[i] += 1,
                        }
                    }
                }
                Err(_) => {
                    for f in &mut failures {
                        *f += 1;
                    }
                }
            }
        }
        for (i, m) in means.iter_mut().enumerate() {
            if counts[i] > 0 {
                *m /= counts[i] as f64;
            } else {
                *m = f64::NAN;
            }
        }
        let lope_mean = learners
            .iter()
            .position(|&l| l == LearnerKind::LopePg)
            .map(|i| means[i]);
        for (i, kind) in learners.iter().enumerate() {
            let relative = match lope_mean {
                Some(lm) if lm != 0.0 => means[i] / lm,
                _ => f64::NAN,
            };
            rows.push(OplRow {
                learner: kind.to_string(),
                parameter_value: value,
                mean_value: means[i],
                relative_to_lope_pg: relative,
                n_replications: counts[i],
                failures: failures[i],
            });
        }
    }
    Ok(OplReport {
        swept_parameter: cfg.swept_parameter.to_string(),
        rows,
    })
}

fn run_one(
    cfg: &OplConfig,
    env_cfg: &SyntheticEnvConfig,
    n: usize,
    learners: &[LearnerKind],
    cell: u64,
    rep: u64,
) -> Result<Vec<Result<f64>>> {
    let mut env_cfg = *env_cfg;
    env_cfg.seed = derive_seed(cfg.seed, &[cell, rep, 80]);
    let env = build_synthetic_env(&env_cfg)?;
    let pi0 = env.make_logging_policy(env_cfg.beta)?;
    let dh = env.sample_historical(&pi0, n, derive_seed(cfg.seed, &[cell, rep, 81]))?;
    let enc = crate::estimators::Encoder::new(
        env.contexts(),
        Some(env.actions().embeddings()),
        env_cfg.n_actions,
    );

    let values = learners
        .iter()
        .enumerate()
        .map(|(i, kind)| -> Result<f64> {
            let mut learner_cfg = cfg.learner;
            learner_cfg.seed = derive_seed(cfg.seed, &[cell, rep, 82, i as u64]);
            learner_cfg.nuisance.seed = learner_cfg.seed;
            let policy = match kind {
                LearnerKind::RegBased => reg_based_policy(
                    &dh,
                    &enc,
                    env_cfg.n_actions,
                    &learner_cfg.nuisance.q_family,
                    learner_cfg.seed,
                )?,
                LearnerKind::IpsPg | LearnerKind::DrPg | LearnerKind::LopePg => {
                    learner_cfg.gradient_estimator = match kind {
                        LearnerKind::IpsPg => GradientEstimatorKind::IpsPg,
                        LearnerKind::DrPg => GradientEstimatorKind::DrPg,
                        _ => GradientEstimatorKind::LopePg,
                    };
                    let out = train_policy(&dh, &enc, &pi0, env_cfg.n_actions, &learner_cfg)?;
                    out.model.to_tabular(env.contexts())?
                }
            };
            env.exact_value(&policy)
        })
        .collect();
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opl_reports_relative_values() {
        let mut cfg = OplConfig::new(SweptParameter::N, vec![40.0]);
        cfg.env.n_users = 25;
        cfg.env.dim_x = 3;
        cfg.env.n_actions = 4;
        cfg.env.dim_e = 2;
        cfg.env.dim_s = 2;
        cfg.env.n_clusters = 2;
        cfg.replications = 2;
        cfg.learner.epochs = 10;
        cfg.learner.nuisance.classifier.epochs = 10;
        cfg.workers = 0;
        let report = run_opl_experiment(&cfg).unwrap();
        assert_eq!(report.rows.len(), 4);
        let lope = report.row(LearnerKind::LopePg, 40.0).unwrap();
        assert!((lope.relative_to_lope_pg - 1.0).abs() < 1e-12);
        for row in &report.rows {
            assert_eq!(row.failures, 0, "{row:?}");
            assert!(row.mean_value.is_finite());
        }
    }
}
