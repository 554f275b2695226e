//! Policy-selection accuracy: how often each estimator ranks the target
//! policy against the logging policy the same way the ground truth does.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, NuisanceConfig};
use crate::envs::SyntheticEnvConfig;

use super::svg::{line_chart, Series};
use super::sweep::{apply_swept, run_parallel, run_replication, SweptParameter};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub swept_parameter: SweptParameter,
    pub grid: Vec<f64>,
    #[serde(default = "d_replications")]
    pub replications: usize,
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default)]
    pub env: SyntheticEnvConfig,
    #[serde(default = "d_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub nuisance: NuisanceConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fix_env_across_replications: bool,
    #[serde(default = "d_workers")]
    pub workers: usize,
}

fn d_replications() -> usize {
    500
}
fn d_n() -> usize {
    500
}
fn d_workers() -> usize {
    1
}
fn d_estimators() -> Vec<EstimatorKind> {
    vec![
        EstimatorKind::Avg,
        EstimatorKind::Lci,
        EstimatorKind::Ips,
        EstimatorKind::Dr,
        EstimatorKind::Lope,
    ]
}

impl SelectionConfig {
    pub fn new(swept_parameter: SweptParameter, grid: Vec<f64>) -> Self {
        Self {
            swept_parameter,
            grid,
            replications: d_replications(),
            n: d_n(),
            env: SyntheticEnvConfig::default(),
            estimators: d_estimators(),
            nuisance: NuisanceConfig::default(),
            seed: 0,
            fix_env_across_replications: false,
            workers: d_workers(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("selection grid is empty".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("need at least 1 replication".into()));
        }
        self.env.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub estimator: String,
    pub parameter_value: f64,
    /// Fraction of replications where the estimator picked the truly better
    /// policy.
    pub accuracy: f64,
    pub n_replications: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub swept_parameter: String,
    pub rows: Vec<SelectionRow>,
}

impl SelectionReport {
    pub fn accuracy(&self, estimator: EstimatorKind, value: f64) -> Option<f64> {
        let name = estimator.to_string();
        self.rows
            .iter()
            .find(|r| r.estimator == name && (r.parameter_value - value).abs() < 1e-12)
            .map(|r| r.accuracy)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["estimator", "param", "accuracy", "R"])?;
        for r in &self.rows {
            wtr.write_record([
                r.estimator.clone(),
                format!("{}", r.parameter_value),
                format!("{:.17e}", r.accuracy),
                format!("{}", r.n_replications),
            ])?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf8"))
    }

    pub fn to_svg(&self) -> String {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.estimator) {
                names.push(r.estimator.clone());
            }
        }
        let series: Vec<Series> = names
            .into_iter()
            .map(|name| Series {
                points: self
                    .rows
                    .iter()
                    .filter(|r| r.estimator == name)
                    .map(|r| (r.parameter_value, r.accuracy))
                    .collect(),
                name,
            })
            .collect();
        line_chart(
            "Policy selection accuracy",
            &self.swept_parameter,
            "accuracy",
            &series,
            false,
        )
    }
}

/// Per replication the estimated target value is compared to the on-policy
/// historical mean; a success means the sign of the estimated difference
/// matches the sign of the exact difference.
pub fn run_selection_experiment(cfg: &SelectionConfig) -> Result<SelectionReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (cell, &value) in cfg.grid.iter().enumerate() {
        let (env_cfg, n) = apply_swept(&cfg.env, cfg.swept_parameter, value, cfg.n);
        env_cfg
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("grid value {value} is invalid: {e}")))?;
        let outputs = run_parallel(cfg.workers, cfg.replications, |rep| {
            run_replication(
                &env_cfg,
                n,
                &cfg.estimators,
                &cfg.nuisance,
                cfg.seed,
                cell as u64,
                rep,
                cfg.fix_env_across_replications,
            )
        });

        for (idx, kind) in cfg.estimators.iter().enumerate() {
            let mut successes = 0usize;
            let mut total = 0usize;
            let mut failures = 0usize;
            for out in &outputs {
                match out {
                    Ok(o) => match &o.estimates[idx] {
                        Ok(v1_hat) => {
                            total += 1;
                            let truth_better = o.truth_v1 > o.truth_v0;
                            let picked_better = *v1_hat > o.v0_estimate;
                            if truth_better == picked_better {
                                successes += 1;
                            }
                        }
                        Err(_) => failures += 1,
                    },
                    Err(_) => failures += 1,
                }
            }
            rows.push(SelectionRow {
                estimator: kind.to_string(),
                parameter_value: value,
                accuracy: if total > 0 {
                    successes as f64 / total as f64
                } else {
                    f64::NAN
                },
                n_replications: total,
                failures,
            });
        }
    }
    Ok(SelectionReport {
        swept_parameter: cfg.swept_parameter.to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_runs_and_reports_accuracies() {
        let mut cfg = SelectionConfig::new(SweptParameter::SigmaR, vec![0.5]);
        cfg.env.n_users = 30;
        cfg.env.dim_x = 3;
        cfg.env.n_actions = 4;
        cfg.env.dim_e = 2;
        cfg.env.dim_s = 2;
        cfg.env.n_clusters = 2;
        cfg.replications = 5;
        cfg.n = 40;
        cfg.estimators = vec![EstimatorKind::Avg, EstimatorKind::Ips];
        cfg.nuisance.classifier.epochs = 10;
        cfg.workers = 0;
        let report = run_selection_experiment(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert!(row.failures == 0);
            assert!((0.0..=1.0).contains(&row.accuracy));
        }
        let csv = report.to_csv_string().unwrap();
        assert!(csv.starts_with("estimator,param,accuracy,R"));
    }
}
