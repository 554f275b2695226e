//! Shared domain types: contexts, actions, policies, datasets, reports.
//!
//! The context population is finite, which is what makes exact policy values
//! computable by enumeration. All types are immutable after construction and
//! safe to share read-only across parallel workers.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const POLICY_ROW_TOL: f64 = 1e-10;

/// Formats a float with 17 significant digits so the CSV round-trips exactly.
pub fn format_f64_exact(x: f64) -> String {
    format!("{x:.16e}")
}

/// A finite population of contexts: one feature row per user plus the
/// population distribution p(x).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    features: Array2<f64>,
    weights: Vec<f64>,
}

impl ContextSet {
    pub fn new(features: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        if features.nrows() != weights.len() {
            return Err(Error::DimensionMismatch {
                context: "ContextSet weights",
                expected: features.nrows(),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidConfig(
                "context weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidConfig(format!(
                "context weights must sum to 1, got {sum}"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite context feature".into()));
        }
        Ok(Self { features, weights })
    }

    /// Uniform p(x) over the rows of `features`.
    pub fn uniform(features: Array2<f64>) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::InvalidConfig("context set must be non-empty".into()));
        }
        // Exactly renormalized so the sum is 1 to the last ulp.
        let mut weights = vec![1.0 / n as f64; n];
        let sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= sum;
        }
        Self::new(features, weights)
    }

    pub fn n_users(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim_x(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature_row(&self, user: usize) -> ndarray::ArrayView1<'_, f64> {
        self.features.row(user)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Discrete action set with one embedding row per action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    embeddings: Array2<f64>,
}

impl ActionSpace {
    pub fn new(embeddings: Array2<f64>) -> Result<Self> {
        if embeddings.nrows() < 2 {
            return Err(Error::InvalidConfig(
                "action space needs at least 2 actions".into(),
            ));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite action embedding".into()));
        }
        Ok(Self { embeddings })
    }

    pub fn n_actions(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn dim_e(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn embedding(&self, action: usize) -> ndarray::ArrayView1<'_, f64> {
        self.embeddings.row(action)
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }
}

/// A stochastic policy over the finite context population: one probability
/// row per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (i, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "policy row {i} has a negative or non-finite probability"
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > POLICY_ROW_TOL {
                return Err(Error::InvalidConfig(format!(
                    "policy row {i} sums to {sum}, expected 1"
                )));
            }
        }
        let rows = probs
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect::<Vec<_>>();
        Ok(Self { probs: rows })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_actions = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut flat = Vec::with_capacity(rows.len() * n_actions);
        for row in &rows {
            if row.len() != n_actions {
                return Err(Error::DimensionMismatch {
                    context: "TabularPolicy rows",
                    expected: n_actions,
                    actual: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        let arr = Array2::from_shape_vec((rows.len(), n_actions), flat)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Self::new(arr)
    }

    /// Uniform policy over `n_actions` for every user.
    pub fn uniform(n_users: usize, n_actions: usize) -> Result<Self> {
        let p = 1.0 / n_actions as f64;
        Self::from_rows(vec![vec![p; n_actions]; n_users])
    }

    pub fn n_users(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn prob(&self, user: usize, action: usize) -> f64 {
        self.probs[user][action]
    }

    pub fn row(&self, user: usize) -> &[f64] {
        &self.probs[user]
    }

    /// Pointwise mixture `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, other: &TabularPolicy, alpha: f64) -> Result<TabularPolicy> {
        if self.n_users() != other.n_users() || self.n_actions() != other.n_actions() {
            return Err(Error::DimensionMismatch {
                context: "TabularPolicy::mix",
                expected: self.n_users() * self.n_actions(),
                actual: other.n_users() * other.n_actions(),
            });
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!(
                "mixture coefficient must be in [0,1], got {alpha}"
            )));
        }
        let rows = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(&pa, &pb)| alpha * pa + (1.0 - alpha) * pb)
                    .collect()
            })
            .collect();
        TabularPolicy::from_rows(rows)
    }
}

/// One logged interaction: context, chosen action, the logging policy's
/// propensity for that action, observed short-term rewards, and the realized
/// long-term reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalRecord {
    pub user_index: usize,
    pub action: usize,
    pub logging_propensity: f64,
    pub short_rewards: Vec<f64>,
    pub long_reward: f64,
}

/// Logged bandit feedback collected under the logging policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalDataset {
    pub records: Vec<HistoricalRecord>,
    /// Identifier of the logging policy that generated the records.
    pub provenance: String,
}

impl HistoricalDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim_s(&self) -> usize {
        self.records
            .first()
            .map(|r| r.short_rewards.len())
            .unwrap_or(0)
    }

    /// Fails on the first record whose stored propensity is not positive.
    pub fn check_support(&self) -> Result<()> {
        for (i, rec) in self.records.iter().enumerate() {
            if !(rec.logging_propensity > 0.0) {
                return Err(Error::SupportViolation {
                    record: i,
                    propensity: rec.logging_propensity,
                });
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let dim_s = self.dim_s();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["user_index".to_string(), "action".into(), "propensity".into()];
        for d in 0..dim_s {
            header.push(format!("s_{d}"));
        }
        header.push("r".into());
        wtr.write_record(&header)?;
        for rec in &self.records {
            let mut row = vec![
                rec.user_index.to_string(),
                rec.action.to_string(),
                format_f64_exact(rec.logging_propensity),
            ];
            for &s in &rec.short_rewards {
                row.push(format_f64_exact(s));
            }
            row.push(format_f64_exact(rec.long_reward));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(r: R, provenance: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        let dim_s = cols.iter().filter(|c| c.starts_with("s_")).count();
        if cols.len() != dim_s + 4 {
            return Err(Error::InvalidConfig(format!(
                "unexpected historical CSV header: {cols:?}"
            )));
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let parse = |i: usize| -> Result<f64> {
                row.get(i)
                    .ok_or_else(|| Error::InvalidConfig("short CSV row".into()))?
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidConfig(format!("bad float: {e}")))
            };
            let user_index: usize = row
                .get(0)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidConfig("bad user_index".into()))?;
            let action: usize = row
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidConfig("bad action".into()))?;
            let logging_propensity = parse(2)?;
            let mut short_rewards = Vec::with_capacity(dim_s);
            for d in 0..dim_s {
                short_rewards.push(parse(3 + d)?);
            }
            let long_reward = parse(3 + dim_s)?;
            records.push(HistoricalRecord {
                user_index,
                action,
                logging_propensity,
                short_rewards,
                long_reward,
            });
        }
        Ok(Self {
            records,
            provenance: provenance.to_string(),
        })
    }

    pub fn load_csv<P: AsRef<Path>>(path: P, provenance: &str) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, provenance)
    }
}

/// One short-term experiment observation under the target policy: context and
/// short-term rewards only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortTermRecord {
    pub user_index: usize,
    pub short_rewards: Vec<f64>,
}

/// Short-term experiment data collected under the target policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortTermDataset {
    pub records: Vec<ShortTermRecord>,
}

impl ShortTermDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim_s(&self) -> usize {
        self.records
            .first()
            .map(|r| r.short_rewards.len())
            .unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let dim_s = self.dim_s();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["user_index".to_string()];
        for d in 0..dim_s {
            header.push(format!("s_{d}"));
        }
        wtr.write_record(&header)?;
        for rec in &self.records {
            let mut row = vec![rec.user_index.to_string()];
            for &s in &rec.short_rewards {
                row.push(format_f64_exact(s));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let dim_s = rdr.headers()?.iter().filter(|c| c.starts_with("s_")).count();
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let user_index: usize = row
                .get(0)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidConfig("bad user_index".into()))?;
            let mut short_rewards = Vec::with_capacity(dim_s);
            for d in 0..dim_s {
                let v: f64 = row
                    .get(1 + d)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::InvalidConfig("bad short reward".into()))?;
                short_rewards.push(v);
            }
            records.push(ShortTermRecord {
                user_index,
                short_rewards,
            });
        }
        Ok(Self { records })
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Long-term rewards observed by actually deploying the target policy.
/// Feasible only as a skyline reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTermOutcomes {
    pub rewards: Vec<f64>,
}

impl LongTermOutcomes {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["r"])?;
        for &r in &self.rewards {
            wtr.write_record([format_f64_exact(r)])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rewards = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let v: f64 = row
                .get(0)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidConfig("bad reward".into()))?;
            rewards.push(v);
        }
        Ok(Self { rewards })
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// The output of a value estimator: a point estimate plus named diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator_name: String,
    pub value: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimateReport {
    pub fn new(name: &str, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "{name} produced a non-finite estimate"
            )));
        }
        Ok(Self {
            estimator_name: name.to_string(),
            value,
            diagnostics: BTreeMap::new(),
        })
    }

    pub fn with(mut self, key: &str, v: f64) -> Self {
        self.diagnostics.insert(key.to_string(), v);
        self
    }
}

/// Exact policy value over the finite population:
/// `sum_x p(x) sum_a pi(a|x) q(x,a)`.
pub fn policy_value_exact(
    policy: &TabularPolicy,
    q_table: &Array2<f64>,
    weights: &[f64],
) -> Result<f64> {
    if policy.n_users() != q_table.nrows() {
        return Err(Error::DimensionMismatch {
            context: "policy_value_exact users",
            expected: q_table.nrows(),
            actual: policy.n_users(),
        });
    }
    if policy.n_actions() != q_table.ncols() {
        return Err(Error::DimensionMismatch {
            context: "policy_value_exact actions",
            expected: q_table.ncols(),
            actual: policy.n_actions(),
        });
    }
    if weights.len() != q_table.nrows() {
        return Err(Error::DimensionMismatch {
            context: "policy_value_exact weights",
            expected: q_table.nrows(),
            actual: weights.len(),
        });
    }
    if q_table.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite q_table entry".into()));
    }
    let mut value = 0.0;
    for (user, &px) in weights.iter().enumerate() {
        let row = policy.row(user);
        let mut inner = 0.0;
        for (a, &pa) in row.iter().enumerate() {
            inner += pa * q_table[(user, a)];
        }
        value += px * inner;
    }
    Ok(value)
}

/// Empirical mean of the long-term rewards in a historical dataset; this is
/// the on-policy value estimate of the logging policy.
pub fn on_policy_value(dataset: &HistoricalDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("on_policy_value needs records"));
    }
    let sum: f64 = dataset.records.iter().map(|r| r.long_reward).sum();
    Ok(sum / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn constant_q(n_users: usize, n_actions: usize, c: f64) -> Array2<f64> {
        Array2::from_elem((n_users, n_actions), c)
    }

    #[test]
    fn uniform_policy_constant_reward() {
        let policy = TabularPolicy::uniform(4, 2).unwrap();
        let q = constant_q(4, 2, 3.25);
        let w = vec![0.25; 4];
        let v = policy_value_exact(&policy, &q, &w).unwrap();
        assert!((v - 3.25).abs() < 1e-12);
    }

    #[test]
    fn greedy_policy_hits_row_max() {
        let q = array![[1.0, 5.0, 2.0], [4.0, 0.0, -1.0]];
        let rows = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]];
        let policy = TabularPolicy::from_rows(rows).unwrap();
        let w = vec![0.5, 0.5];
        let v = policy_value_exact(&policy, &q, &w).unwrap();
        assert!((v - (5.0 + 4.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn policy_value_linear_in_q() {
        let policy = TabularPolicy::from_rows(vec![vec![0.3, 0.7], vec![0.9, 0.1]]).unwrap();
        let q1 = array![[1.0, -2.0], [0.5, 3.0]];
        let q2 = array![[2.0, 0.25], [-1.0, 1.0]];
        let w = vec![0.4, 0.6];
        let v1 = policy_value_exact(&policy, &q1, &w).unwrap();
        let v2 = policy_value_exact(&policy, &q2, &w).unwrap();
        let v12 = policy_value_exact(&policy, &(&q1 + &q2), &w).unwrap();
        assert!((v12 - (v1 + v2)).abs() < 1e-12);
    }

    #[test]
    fn mixture_policy_value_is_affine() {
        let a = TabularPolicy::from_rows(vec![vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let b = TabularPolicy::from_rows(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let q = array![[1.0, 4.0], [2.0, -3.0]];
        let w = vec![0.5, 0.5];
        let alpha = 0.3;
        let mixed = a.mix(&b, alpha).unwrap();
        let v_mix = policy_value_exact(&mixed, &q, &w).unwrap();
        let v_a = policy_value_exact(&a, &q, &w).unwrap();
        let v_b = policy_value_exact(&b, &q, &w).unwrap();
        assert!((v_mix - (alpha * v_a + (1.0 - alpha) * v_b)).abs() < 1e-12);
    }

    #[test]
    fn policy_rejects_bad_rows() {
        assert!(TabularPolicy::from_rows(vec![vec![0.5, 0.6]]).is_err());
        assert!(TabularPolicy::from_rows(vec![vec![-0.1, 1.1]]).is_err());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let policy = TabularPolicy::uniform(3, 2).unwrap();
        let q = constant_q(4, 2, 1.0);
        let w = vec![0.25; 4];
        assert!(policy_value_exact(&policy, &q, &w).is_err());
    }

    #[test]
    fn on_policy_value_means_rewards() {
        let mk = |rs: &[f64]| HistoricalDataset {
            records: rs
                .iter()
                .map(|&r| HistoricalRecord {
                    user_index: 0,
                    action: 0,
                    logging_propensity: 1.0,
                    short_rewards: vec![],
                    long_reward: r,
                })
                .collect(),
            provenance: "test".into(),
        };
        assert!((on_policy_value(&mk(&[1.0, 1.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!((on_policy_value(&mk(&[0.0, 1.0])).unwrap() - 0.5).abs() < 1e-15);
        assert!(on_policy_value(&mk(&[])).is_err());
    }

    #[test]
    fn historical_csv_roundtrip_is_exact() {
        let ds = HistoricalDataset {
            records: vec![
                HistoricalRecord {
                    user_index: 3,
                    action: 1,
                    logging_propensity: 0.1 + 1e-17,
                    short_rewards: vec![0.1, -2.5e-9, 3.0],
                    long_reward: std::f64::consts::PI,
                },
                HistoricalRecord {
                    user_index: 0,
                    action: 7,
                    logging_propensity: 1.0 / 3.0,
                    short_rewards: vec![f64::MIN_POSITIVE, 1e300, -0.0],
                    long_reward: -1.0 / 7.0,
                },
            ],
            provenance: "pi0".into(),
        };
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = HistoricalDataset::read_csv(buf.as_slice(), "pi0").unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn short_term_csv_roundtrip() {
        let ds = ShortTermDataset {
            records: vec![ShortTermRecord {
                user_index: 5,
                short_rewards: vec![1.5, -0.25],
            }],
        };
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = ShortTermDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn support_check_names_the_record() {
        let ds = HistoricalDataset {
            records: vec![
                HistoricalRecord {
                    user_index: 0,
                    action: 0,
                    logging_propensity: 0.5,
                    short_rewards: vec![],
                    long_reward: 0.0,
                },
                HistoricalRecord {
                    user_index: 1,
                    action: 0,
                    logging_propensity: 0.0,
                    short_rewards: vec![],
                    long_reward: 0.0,
                },
            ],
            provenance: "t".into(),
        };
        match ds.check_support() {
            Err(Error::SupportViolation { record, .. }) => assert_eq!(record, 1),
            other => panic!("expected support violation, got {other:?}"),
        }
    }
}
