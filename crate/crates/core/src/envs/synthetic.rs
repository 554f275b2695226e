//! Synthetic benchmark environment.
//!
//! A finite population of users with Gaussian features, a discrete action set
//! with Gaussian embeddings, and an expected long-term reward
//!
//! `q(x,a; lambda) = (1 - lambda) * g(x, f(x,a)) + lambda * h(x,a)`
//!
//! where `f` is the expected short-term reward vector, `g` the surrogate
//! effect, and `h` the action effect. `lambda = 0` satisfies surrogacy by
//! construction; `lambda = 1` routes all signal around the surrogates.
//!
//! Each inner product in `f` and `h` is normalized by the square root of the
//! number of summed coordinates, which pins the reward scale (and with it
//! the sharpness of the softmax logging policy and the size of the
//! importance weights) to the benchmark's reported values independent of
//! the configured dimensions.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::kmeans;
use crate::seeding::{derive_seed, rng_from, stream};
use crate::types::{
    ActionSpace, ContextSet, HistoricalDataset, HistoricalRecord, LongTermOutcomes,
    ShortTermDataset, ShortTermRecord, TabularPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnvConfig {
    #[serde(default = "d_n_users")]
    pub n_users: usize,
    #[serde(default = "d_dim_x")]
    pub dim_x: usize,
    #[serde(default = "d_n_actions")]
    pub n_actions: usize,
    #[serde(default = "d_dim_e")]
    pub dim_e: usize,
    #[serde(default = "d_dim_s")]
    pub dim_s: usize,
    #[serde(default = "d_n_clusters")]
    pub n_clusters: usize,
    /// Surrogacy-violation level in [0, 1].
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    /// Logging-policy softmax inverse temperature.
    #[serde(default = "d_beta")]
    pub beta: f64,
    /// Target-policy epsilon-greedy noise.
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    /// Long-term reward noise standard deviation.
    #[serde(default = "d_sigma_r")]
    pub sigma_r: f64,
    /// Short-term reward noise standard deviation.
    #[serde(default = "d_sigma_s")]
    pub sigma_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Generate the realized long reward from the realized (noisy) short
    /// rewards rather than from their expectation. Either way the conditional
    /// mean given (x, a) is `q(x,a)` because the surrogate effect is linear
    /// in s.
    #[serde(default = "d_true")]
    pub reward_uses_realized_s: bool,
}

fn d_n_users() -> usize {
    1000
}
fn d_dim_x() -> usize {
    10
}
fn d_n_actions() -> usize {
    30
}
fn d_dim_e() -> usize {
    5
}
fn d_dim_s() -> usize {
    3
}
fn d_n_clusters() -> usize {
    3
}
fn d_lambda() -> f64 {
    0.5
}
fn d_beta() -> f64 {
    0.5
}
fn d_epsilon() -> f64 {
    0.1
}
fn d_sigma_r() -> f64 {
    0.5
}
fn d_sigma_s() -> f64 {
    0.5
}
fn d_true() -> bool {
    true
}

impl Default for SyntheticEnvConfig {
    fn default() -> Self {
        Self {
            n_users: d_n_users(),
            dim_x: d_dim_x(),
            n_actions: d_n_actions(),
            dim_e: d_dim_e(),
            dim_s: d_dim_s(),
            n_clusters: d_n_clusters(),
            lambda: d_lambda(),
            beta: d_beta(),
            epsilon: d_epsilon(),
            sigma_r: d_sigma_r(),
            sigma_s: d_sigma_s(),
            seed: 0,
            reward_uses_realized_s: d_true(),
        }
    }
}

impl SyntheticEnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be in [0,1], got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be in [0,1], got {}",
                self.epsilon
            )));
        }
        if self.sigma_r < 0.0 || self.sigma_s < 0.0 {
            return Err(Error::InvalidConfig(
                "sigma_r and sigma_s must be >= 0".into(),
            ));
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_users {
            return Err(Error::InvalidConfig(format!(
                "n_clusters must be in [1, n_users], got {}",
                self.n_clusters
            )));
        }
        if self.n_users == 0 || self.n_actions < 2 || self.dim_x == 0 || self.dim_e == 0
            || self.dim_s == 0
        {
            return Err(Error::InvalidConfig("degenerate environment shape".into()));
        }
        Ok(())
    }

    pub fn load_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reward-function parameters, all drawn from Uniform[-1, 1].
///
/// Short-term rewards are vector valued, so `f` carries one parameter set per
/// surrogate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnvParams {
    /// Per surrogate dimension: `dim_x x dim_e` bilinear map.
    pub m_f: Vec<Array2<f64>>,
    /// `dim_x x dim_e` bilinear map of the action effect.
    pub m_h: Array2<f64>,
    /// `n_clusters x dim_s` surrogate-effect coefficients.
    pub theta_g: Array2<f64>,
    /// Per surrogate dimension: `n_clusters x dim_x`.
    pub theta_f_cluster: Vec<Array2<f64>>,
    /// Per surrogate dimension: `n_actions x dim_e`.
    pub theta_f_action: Vec<Array2<f64>>,
    /// `n_clusters x dim_x`.
    pub theta_h_cluster: Array2<f64>,
    /// `n_actions x dim_e`.
    pub theta_h_action: Array2<f64>,
    /// k-means cluster index per user.
    pub cluster_of: Vec<usize>,
}

/// A fully built environment with precomputed reward tables.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnv {
    config: SyntheticEnvConfig,
    contexts: ContextSet,
    actions: ActionSpace,
    params: SyntheticEnvParams,
    /// `n_users x n_actions x dim_s` expected short-term rewards.
    f_table: Array3<f64>,
    /// `n_users x n_actions` expected long-term reward at the config lambda.
    q_table: Array2<f64>,
    /// `n_users x n_actions` action effect.
    h_table: Array2<f64>,
}

fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Samples features, embeddings, and reward parameters, then clusters users
/// by k-means. Deterministic given `config.seed`.
pub fn build_synthetic_env(config: &SyntheticEnvConfig) -> Result<SyntheticEnv> {
    config.validate()?;
    let mut rng = rng_from(derive_seed(config.seed, &[stream::ENV]));

    let features = normal_matrix(&mut rng, config.n_users, config.dim_x);
    let embeddings = normal_matrix(&mut rng, config.n_actions, config.dim_e);

    let m_f: Vec<Array2<f64>> = (0..config.dim_s)
        .map(|_| uniform_matrix(&mut rng, config.dim_x, config.dim_e))
        .collect();
    let m_h = uniform_matrix(&mut rng, config.dim_x, config.dim_e);
    let theta_g = uniform_matrix(&mut rng, config.n_clusters, config.dim_s);
    let theta_f_cluster: Vec<Array2<f64>> = (0..config.dim_s)
        .map(|_| uniform_matrix(&mut rng, config.n_clusters, config.dim_x))
        .collect();
    let theta_f_action: Vec<Array2<f64>> = (0..config.dim_s)
        .map(|_| uniform_matrix(&mut rng, config.n_actions, config.dim_e))
        .collect();
    let theta_h_cluster = uniform_matrix(&mut rng, config.n_clusters, config.dim_x);
    let theta_h_action = uniform_matrix(&mut rng, config.n_actions, config.dim_e);

    let clustering = kmeans(
        &features,
        config.n_clusters,
        derive_seed(config.seed, &[stream::KMEANS]),
    )?;

    let params = SyntheticEnvParams {
        m_f,
        m_h,
        theta_g,
        theta_f_cluster,
        theta_f_action,
        theta_h_cluster,
        theta_h_action,
        cluster_of: clustering.assignments,
    };

    let contexts = ContextSet::uniform(features)?;
    let actions = ActionSpace::new(embeddings)?;

    let mut env = SyntheticEnv {
        config: *config,
        contexts,
        actions,
        params,
        f_table: Array3::zeros((config.n_users, config.n_actions, config.dim_s)),
        q_table: Array2::zeros((config.n_users, config.n_actions)),
        h_table: Array2::zeros((config.n_users, config.n_actions)),
    };
    env.precompute_tables();
    Ok(env)
}

impl SyntheticEnv {
    fn precompute_tables(&mut self) {
        for u in 0..self.config.n_users {
            for a in 0..self.config.n_actions {
                let f = self.expected_short_unchecked(u, a);
                for (d, &v) in f.iter().enumerate() {
                    self.f_table[(u, a, d)] = v;
                }
                let h = self.action_effect_unchecked(u, a);
                self.h_table[(u, a)] = h;
                let g = self.surrogate_effect_unchecked(u, &f);
                self.q_table[(u, a)] = (1.0 - self.config.lambda) * g + self.config.lambda * h;
            }
        }
    }

    pub fn config(&self) -> &SyntheticEnvConfig {
        &self.config
    }

    pub fn contexts(&self) -> &ContextSet {
        &self.contexts
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn params(&self) -> &SyntheticEnvParams {
        &self.params
    }

    /// `n_users x n_actions` table of `q(x, a; lambda)`.
    pub fn q_table(&self) -> &Array2<f64> {
        &self.q_table
    }

    pub fn cluster_of(&self, user: usize) -> usize {
        self.params.cluster_of[user]
    }

    fn check_indices(&self, user: usize, action: usize) -> Result<()> {
        if user >= self.config.n_users {
            return Err(Error::IndexOutOfRange {
                context: "user_index",
                index: user,
                len: self.config.n_users,
            });
        }
        if action >= self.config.n_actions {
            return Err(Error::IndexOutOfRange {
                context: "action",
                index: action,
                len: self.config.n_actions,
            });
        }
        Ok(())
    }

    /// Normalizer that keeps each inner product at unit variance regardless
    /// of dimensionality, so reward magnitudes match the benchmark's
    /// reported value scale (greedy value ~1.6, softmax logging value ~0.8)
    /// for any feature dimensions.
    fn term_scales(&self) -> (f64, f64, f64) {
        let bilinear = ((self.config.dim_x * self.config.dim_e) as f64).sqrt();
        let cluster = (self.config.dim_x as f64).sqrt();
        let action = (self.config.dim_e as f64).sqrt();
        (bilinear, cluster, action)
    }

    fn expected_short_unchecked(&self, user: usize, action: usize) -> Vec<f64> {
        let x = self.contexts.feature_row(user);
        let e = self.actions.embedding(action);
        let c = self.params.cluster_of[user];
        let (bs, cs, als) = self.term_scales();
        (0..self.config.dim_s)
            .map(|d| {
                let bilinear = x.dot(&self.params.m_f[d].dot(&e)) / bs;
                let cluster_term = self.params.theta_f_cluster[d].row(c).dot(&x) / cs;
                let action_term = self.params.theta_f_action[d].row(action).dot(&e) / als;
                bilinear + cluster_term + action_term
            })
            .collect()
    }

    fn surrogate_effect_unchecked(&self, user: usize, s: &[f64]) -> f64 {
        let c = self.params.cluster_of[user];
        self.params
            .theta_g
            .row(c)
            .iter()
            .zip(s)
            .map(|(t, v)| t * v)
            .sum()
    }

    fn action_effect_unchecked(&self, user: usize, action: usize) -> f64 {
        let x = self.contexts.feature_row(user);
        let e = self.actions.embedding(action);
        let c = self.params.cluster_of[user];
        let (bs, cs, als) = self.term_scales();
        x.dot(&self.params.m_h.dot(&e)) / bs
            + self.params.theta_h_cluster.row(c).dot(&x) / cs
            + self.params.theta_h_action.row(action).dot(&e) / als
    }

    /// Expected short-term reward vector `f(x, a)`.
    pub fn expected_short(&self, user: usize, action: usize) -> Result<Vec<f64>> {
        self.check_indices(user, action)?;
        Ok(self.expected_short_unchecked(user, action))
    }

    /// Expected long-term reward `q(x, a; lambda)`.
    pub fn expected_long(&self, user: usize, action: usize) -> Result<f64> {
        self.check_indices(user, action)?;
        Ok(self.q_table[(user, action)])
    }

    /// Surrogate effect `g(x, s)` evaluated at an arbitrary short-reward
    /// vector.
    pub fn surrogate_effect(&self, user: usize, s: &[f64]) -> Result<f64> {
        if user >= self.config.n_users {
            return Err(Error::IndexOutOfRange {
                context: "user_index",
                index: user,
                len: self.config.n_users,
            });
        }
        if s.len() != self.config.dim_s {
            return Err(Error::DimensionMismatch {
                context: "surrogate_effect",
                expected: self.config.dim_s,
                actual: s.len(),
            });
        }
        Ok(self.surrogate_effect_unchecked(user, s))
    }

    /// Action effect `h(x, a)`.
    pub fn action_effect(&self, user: usize, action: usize) -> Result<f64> {
        self.check_indices(user, action)?;
        Ok(self.h_table[(user, action)])
    }

    /// Softmax logging policy `pi0(a|x) = softmax(beta * q(x, .))`.
    pub fn make_logging_policy(&self, beta: f64) -> Result<TabularPolicy> {
        let mut rows = Vec::with_capacity(self.config.n_users);
        for u in 0..self.config.n_users {
            let logits: Vec<f64> = (0..self.config.n_actions)
                .map(|a| beta * self.q_table[(u, a)])
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut row: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = row.iter().sum();
            for v in &mut row {
                *v /= sum;
            }
            rows.push(row);
        }
        TabularPolicy::from_rows(rows)
    }

    /// Epsilon-greedy target policy; argmax ties break toward the lowest
    /// action index.
    pub fn make_target_policy(&self, epsilon: f64) -> Result<TabularPolicy> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be in [0,1], got {epsilon}"
            )));
        }
        let n_actions = self.config.n_actions;
        let mut rows = Vec::with_capacity(self.config.n_users);
        for u in 0..self.config.n_users {
            let mut best = 0usize;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..n_actions {
                let q = self.q_table[(u, a)];
                if q > best_q {
                    best_q = q;
                    best = a;
                }
            }
            let base = epsilon / n_actions as f64;
            let mut row = vec![base; n_actions];
            row[best] += 1.0 - epsilon;
            rows.push(row);
        }
        TabularPolicy::from_rows(rows)
    }

    /// Ground-truth policy value by exact enumeration.
    pub fn exact_value(&self, policy: &TabularPolicy) -> Result<f64> {
        crate::types::policy_value_exact(policy, &self.q_table, self.contexts.weights())
    }

    fn sample_user(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let weights = self.contexts.weights();
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.len() - 1
    }

    fn sample_action(row: &[f64], rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        row.len() - 1
    }

    fn realized_short(&self, user: usize, action: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.config.dim_s)
            .map(|d| {
                let noise: f64 = rng.sample(StandardNormal);
                self.f_table[(user, action, d)] + self.config.sigma_s * noise
            })
            .collect()
    }

    fn realized_long(&self, user: usize, action: usize, s: &[f64], rng: &mut impl Rng) -> f64 {
        let noise: f64 = rng.sample(StandardNormal);
        let mean = if self.config.reward_uses_realized_s {
            (1.0 - self.config.lambda) * self.surrogate_effect_unchecked(user, s)
                + self.config.lambda * self.h_table[(user, action)]
        } else {
            self.q_table[(user, action)]
        };
        mean + self.config.sigma_r * noise
    }

    /// Draws `(x, a, s, r)` tuples i.i.d. under the given logging policy.
    pub fn sample_historical(
        &self,
        logging_policy: &TabularPolicy,
        n: usize,
        seed: u64,
    ) -> Result<HistoricalDataset> {
        if n == 0 {
            return Err(Error::EmptyDataset("sample_historical needs n >= 1"));
        }
        self.check_policy(logging_policy)?;
        let mut rng = rng_from(derive_seed(seed, &[stream::HISTORICAL]));
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let user = self.sample_user(&mut rng);
            let row = logging_policy.row(user);
            let action = Self::sample_action(row, &mut rng);
            let s = self.realized_short(user, action, &mut rng);
            let r = self.realized_long(user, action, &s, &mut rng);
            records.push(HistoricalRecord {
                user_index: user,
                action,
                logging_propensity: row[action],
                short_rewards: s,
                long_reward: r,
            });
        }
        Ok(HistoricalDataset {
            records,
            provenance: format!("softmax-logging(beta={})", self.config.beta),
        })
    }

    /// Draws `(x, s)` pairs under the target policy; actions are sampled but
    /// not recorded.
    pub fn sample_short_experiment(
        &self,
        target_policy: &TabularPolicy,
        n: usize,
        seed: u64,
    ) -> Result<ShortTermDataset> {
        if n == 0 {
            return Err(Error::EmptyDataset("sample_short_experiment needs n >= 1"));
        }
        self.check_policy(target_policy)?;
        let mut rng = rng_from(derive_seed(seed, &[stream::SHORT_TERM]));
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let user = self.sample_user(&mut rng);
            let action = Self::sample_action(target_policy.row(user), &mut rng);
            let s = self.realized_short(user, action, &mut rng);
            records.push(ShortTermRecord {
                user_index: user,
                short_rewards: s,
            });
        }
        Ok(ShortTermDataset { records })
    }

    /// Draws long-term rewards under the target policy (the skyline
    /// reference data).
    pub fn sample_long_experiment(
        &self,
        target_policy: &TabularPolicy,
        n: usize,
        seed: u64,
    ) -> Result<LongTermOutcomes> {
        if n == 0 {
            return Err(Error::EmptyDataset("sample_long_experiment needs n >= 1"));
        }
        self.check_policy(target_policy)?;
        let mut rng = rng_from(derive_seed(seed, &[stream::LONG_TERM]));
        let mut rewards = Vec::with_capacity(n);
        for _ in 0..n {
            let user = self.sample_user(&mut rng);
            let action = Self::sample_action(target_policy.row(user), &mut rng);
            let s = self.realized_short(user, action, &mut rng);
            rewards.push(self.realized_long(user, action, &s, &mut rng));
        }
        Ok(LongTermOutcomes { rewards })
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.n_users() != self.config.n_users || policy.n_actions() != self.config.n_actions {
            return Err(Error::DimensionMismatch {
                context: "policy shape",
                expected: self.config.n_users * self.config.n_actions,
                actual: policy.n_users() * policy.n_actions(),
            });
        }
        Ok(())
    }

    /// Writes every sampled parameter tensor to CSV files under `dir`.
    pub fn dump_csv<P: AsRef<Path>>(&self, dir: P) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut write = |name: &str, m: &Array2<f64>| -> Result<()> {
            let path = dir.join(name);
            let mut wtr = csv::Writer::from_path(&path)?;
            for row in m.rows() {
                wtr.write_record(row.iter().map(|v| crate::types::format_f64_exact(*v)))?;
            }
            wtr.flush()?;
            written.push(name.to_string());
            Ok(())
        };
        write("user_features.csv", self.contexts.features())?;
        write("action_embeddings.csv", self.actions.embeddings())?;
        for (d, m) in self.params.m_f.iter().enumerate() {
            write(&format!("m_f_{d}.csv"), m)?;
        }
        write("m_h.csv", &self.params.m_h)?;
        write("theta_g.csv", &self.params.theta_g)?;
        for (d, m) in self.params.theta_f_cluster.iter().enumerate() {
            write(&format!("theta_f_cluster_{d}.csv"), m)?;
        }
        for (d, m) in self.params.theta_f_action.iter().enumerate() {
            write(&format!("theta_f_action_{d}.csv"), m)?;
        }
        write("theta_h_cluster.csv", &self.params.theta_h_cluster)?;
        write("theta_h_action.csv", &self.params.theta_h_action)?;
        let path = dir.join("cluster_of.csv");
        let mut wtr = csv::Writer::from_path(&path)?;
        wtr.write_record(["user_index", "cluster"])?;
        for (u, &c) in self.params.cluster_of.iter().enumerate() {
            wtr.write_record([u.to_string(), c.to_string()])?;
        }
        wtr.flush()?;
        written.push("cluster_of.csv".to_string());
        Ok(written)
    }
}
