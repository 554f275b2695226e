//! Fully enumerable environment with discrete surrogates.
//!
//! Everything here is computed by exact summation over
//! `p(x) pi(a|x) p(s|x,a) p(r|x,a,s)`, which makes estimator expectations,
//! variances, and the importance-weight identities checkable to machine
//! precision.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng_from, stream};
use crate::types::{
    ContextSet, HistoricalDataset, HistoricalRecord, TabularPolicy,
};

/// Conditional law of the long-term reward given `(x, a, s)`. All three have
/// finite support so expectations stay exactly enumerable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardLaw {
    /// `r = q(x,a,s)` with probability 1.
    Deterministic,
    /// `r = q(x,a,s) +- sigma(x,a,s)` with probability 1/2 each, giving mean
    /// `q` and variance `sigma^2` with unbounded `q`.
    TwoPoint,
    /// `r ~ Bernoulli(q(x,a,s))`; requires `q` in [0, 1].
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularEnv {
    pub p_x: Vec<f64>,
    /// `(x, a, s)` surrogate distribution; each `(x, a)` slice sums to 1.
    pub p_s_given_xa: Array3<f64>,
    /// Expected long-term reward `q(x, a, s)`.
    pub q_xas: Array3<f64>,
    /// Reward noise variance `sigma^2(x, a, s)`; only the two-point law
    /// reads it.
    pub reward_noise_var: Array3<f64>,
    pub reward_law: RewardLaw,
}

impl TabularEnv {
    pub fn new(
        p_x: Vec<f64>,
        p_s_given_xa: Array3<f64>,
        q_xas: Array3<f64>,
        reward_noise_var: Array3<f64>,
        reward_law: RewardLaw,
    ) -> Result<Self> {
        let (nx, na, ns) = p_s_given_xa.dim();
        if p_x.len() != nx || q_xas.dim() != (nx, na, ns) || reward_noise_var.dim() != (nx, na, ns)
        {
            return Err(Error::DimensionMismatch {
                context: "TabularEnv tensors",
                expected: nx * na * ns,
                actual: q_xas.len(),
            });
        }
        let px_sum: f64 = p_x.iter().sum();
        if (px_sum - 1.0).abs() > 1e-12 || p_x.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "p_x must be a distribution, sums to {px_sum}"
            )));
        }
        for x in 0..nx {
            for a in 0..na {
                let sum: f64 = (0..ns).map(|s| p_s_given_xa[(x, a, s)]).sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidConfig(format!(
                        "p(s|x={x},a={a}) sums to {sum}"
                    )));
                }
            }
        }
        if reward_law == RewardLaw::Bernoulli {
            if q_xas.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
                return Err(Error::InvalidConfig(
                    "Bernoulli reward law requires q in [0,1]".into(),
                ));
            }
        }
        if reward_noise_var.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidConfig("negative reward noise variance".into()));
        }
        Ok(Self {
            p_x,
            p_s_given_xa,
            q_xas,
            reward_noise_var,
            reward_law,
        })
    }

    /// Randomized environment from a seeded uniform draw, then normalized.
    /// Surrogate distributions keep full support.
    pub fn random(seed: u64, nx: usize, na: usize, ns: usize, law: RewardLaw) -> Self {
        let mut rng = rng_from(derive_seed(seed, &[stream::ENV]));
        let mut p_x: Vec<f64> = (0..nx).map(|_| rng.random_range(0.1..1.1)).collect();
        let sum: f64 = p_x.iter().sum();
        for p in &mut p_x {
            *p /= sum;
        }
        let mut p_s = Array3::zeros((nx, na, ns));
        for x in 0..nx {
            for a in 0..na {
                let mut row: Vec<f64> = (0..ns).map(|_| rng.random_range(0.1..1.1)).collect();
                let s: f64 = row.iter().sum();
                for v in &mut row {
                    *v /= s;
                }
                for (si, &v) in row.iter().enumerate() {
                    p_s[(x, a, si)] = v;
                }
            }
        }
        let q_xas = match law {
            RewardLaw::Bernoulli => {
                Array3::from_shape_fn((nx, na, ns), |_| rng.random_range(0.05..0.95))
            }
            _ => Array3::from_shape_fn((nx, na, ns), |_| rng.random_range(-1.0..1.0)),
        };
        let reward_noise_var = match law {
            RewardLaw::TwoPoint => Array3::from_shape_fn((nx, na, ns), |_| {
                rng.random_range(0.0..0.5)
            }),
            _ => Array3::zeros((nx, na, ns)),
        };
        Self::new(p_x, p_s, q_xas, reward_noise_var, law).expect("randomized env is valid")
    }

    /// Randomized environment in which `q(x,a,s)` does not depend on the
    /// action, so surrogacy holds by construction.
    pub fn random_surrogacy(seed: u64, nx: usize, na: usize, ns: usize, law: RewardLaw) -> Self {
        let mut env = Self::random(seed, nx, na, ns, law);
        let mut rng = rng_from(derive_seed(seed, &[stream::ENV, 1]));
        for x in 0..nx {
            for s in 0..ns {
                let v = match law {
                    RewardLaw::Bernoulli => rng.random_range(0.05..0.95),
                    _ => rng.random_range(-1.0..1.0),
                };
                for a in 0..na {
                    env.q_xas[(x, a, s)] = v;
                }
            }
        }
        env
    }

    /// Random full-support policy over this environment's contexts.
    pub fn random_policy(&self, seed: u64) -> TabularPolicy {
        let (nx, na, _) = self.p_s_given_xa.dim();
        let mut rng = rng_from(derive_seed(seed, &[stream::MODEL]));
        let rows: Vec<Vec<f64>> = (0..nx)
            .map(|_| {
                let mut row: Vec<f64> = (0..na).map(|_| rng.random_range(0.1..1.1)).collect();
                let s: f64 = row.iter().sum();
                for v in &mut row {
                    *v /= s;
                }
                row
            })
            .collect();
        TabularPolicy::from_rows(rows).expect("random rows normalize")
    }

    pub fn n_contexts(&self) -> usize {
        self.p_x.len()
    }

    pub fn n_actions(&self) -> usize {
        self.p_s_given_xa.dim().1
    }

    pub fn n_surrogates(&self) -> usize {
        self.p_s_given_xa.dim().2
    }

    /// Finite support of `p(r | x, a, s)` as `(value, probability)` atoms.
    pub fn reward_support(&self, x: usize, a: usize, s: usize) -> Vec<(f64, f64)> {
        let q = self.q_xas[(x, a, s)];
        match self.reward_law {
            RewardLaw::Deterministic => vec![(q, 1.0)],
            RewardLaw::TwoPoint => {
                let sd = self.reward_noise_var[(x, a, s)].sqrt();
                vec![(q - sd, 0.5), (q + sd, 0.5)]
            }
            RewardLaw::Bernoulli => vec![(0.0, 1.0 - q), (1.0, q)],
        }
    }

    /// `q(x, a) = E_{p(s|x,a)}[q(x,a,s)]`.
    pub fn q_xa(&self, x: usize, a: usize) -> f64 {
        (0..self.n_surrogates())
            .map(|s| self.p_s_given_xa[(x, a, s)] * self.q_xas[(x, a, s)])
            .sum()
    }

    pub fn q_xa_table(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n_contexts(), self.n_actions()), |(x, a)| {
            self.q_xa(x, a)
        })
    }

    /// `sigma^2(x, a) = V[r | x, a]`, combining within-`s` reward noise and
    /// the spread of `q(x,a,s)` across surrogates.
    pub fn sigma2_xa(&self, x: usize, a: usize) -> f64 {
        let mean = self.q_xa(x, a);
        let mut second = 0.0;
        for s in 0..self.n_surrogates() {
            let p = self.p_s_given_xa[(x, a, s)];
            for (r, pr) in self.reward_support(x, a, s) {
                second += p * pr * r * r;
            }
        }
        second - mean * mean
    }

    /// Exact `V(pi)` by enumeration.
    pub fn exact_value(&self, policy: &TabularPolicy) -> Result<f64> {
        crate::types::policy_value_exact(policy, &self.q_xa_table(), &self.p_x)
    }

    /// Marginal surrogate distribution `pi(s|x) = sum_a pi(a|x) p(s|x,a)`.
    pub fn marginal_surrogate(&self, policy: &TabularPolicy, x: usize) -> Result<Vec<f64>> {
        if x >= self.n_contexts() {
            return Err(Error::IndexOutOfRange {
                context: "tabular context",
                index: x,
                len: self.n_contexts(),
            });
        }
        if policy.n_users() != self.n_contexts() || policy.n_actions() != self.n_actions() {
            return Err(Error::DimensionMismatch {
                context: "marginal_surrogate policy",
                expected: self.n_contexts() * self.n_actions(),
                actual: policy.n_users() * policy.n_actions(),
            });
        }
        let mut out = vec![0.0; self.n_surrogates()];
        for a in 0..self.n_actions() {
            let pa = policy.prob(x, a);
            for (s, o) in out.iter_mut().enumerate() {
                *o += pa * self.p_s_given_xa[(x, a, s)];
            }
        }
        Ok(out)
    }

    /// Bayes posterior `pi0(a | x, s) = pi0(a|x) p(s|x,a) / pi0(s|x)`.
    pub fn action_posterior(&self, pi0: &TabularPolicy, x: usize, s: usize) -> Result<Vec<f64>> {
        let marginal = self.marginal_surrogate(pi0, x)?;
        let denom = marginal[s];
        if denom <= 0.0 {
            return Err(Error::Numeric(format!(
                "pi0(s={s}|x={x}) is zero; posterior undefined"
            )));
        }
        Ok((0..self.n_actions())
            .map(|a| pi0.prob(x, a) * self.p_s_given_xa[(x, a, s)] / denom)
            .collect())
    }

    /// Posterior table indexed `(x, s, a)`, for plugging exact conditionals
    /// into the surrogate-weight model.
    pub fn action_posterior_table(&self, pi0: &TabularPolicy) -> Result<Array3<f64>> {
        let (nx, na, ns) = self.p_s_given_xa.dim();
        let mut table = Array3::zeros((nx, ns, na));
        for x in 0..nx {
            for s in 0..ns {
                let post = self.action_posterior(pi0, x, s)?;
                for (a, &p) in post.iter().enumerate() {
                    table[(x, s, a)] = p;
                }
            }
        }
        Ok(table)
    }

    /// True surrogate importance weight `w(x,s) = pi1(s|x) / pi0(s|x)`.
    pub fn surrogate_weight(
        &self,
        pi0: &TabularPolicy,
        pi1: &TabularPolicy,
        x: usize,
        s: usize,
    ) -> Result<f64> {
        let m1 = self.marginal_surrogate(pi1, x)?;
        let m0 = self.marginal_surrogate(pi0, x)?;
        if m0[s] <= 0.0 {
            return Err(Error::Numeric(format!("pi0(s={s}|x={x}) is zero")));
        }
        Ok(m1[s] / m0[s])
    }

    /// Exact expectation of a per-record estimator kernel under
    /// `p(x) pi(a|x) p(s|x,a) p(r|x,a,s)`.
    ///
    /// The sampling policy is explicit: historical-data estimators take the
    /// logging policy, short-term-data estimators take the target policy.
    pub fn exact_estimator_expectation<K>(&self, policy: &TabularPolicy, kernel: K) -> Result<f64>
    where
        K: Fn(usize, usize, usize, f64) -> f64,
    {
        let mut total = 0.0;
        for x in 0..self.n_contexts() {
            for a in 0..self.n_actions() {
                let w = self.p_x[x] * policy.prob(x, a);
                if w == 0.0 {
                    continue;
                }
                for s in 0..self.n_surrogates() {
                    let ws = w * self.p_s_given_xa[(x, a, s)];
                    if ws == 0.0 {
                        continue;
                    }
                    for (r, pr) in self.reward_support(x, a, s) {
                        let k = kernel(x, a, s, r);
                        if !k.is_finite() {
                            return Err(Error::Numeric(format!(
                                "kernel returned non-finite value at (x={x}, a={a}, s={s}, r={r})"
                            )));
                        }
                        total += ws * pr * k;
                    }
                }
            }
        }
        Ok(total)
    }

    /// Exact expectation of a vector-valued kernel (for policy gradients).
    pub fn exact_vector_expectation<K>(
        &self,
        policy: &TabularPolicy,
        dim: usize,
        kernel: K,
    ) -> Result<Vec<f64>>
    where
        K: Fn(usize, usize, usize, f64) -> Vec<f64>,
    {
        let mut total = vec![0.0; dim];
        for x in 0..self.n_contexts() {
            for a in 0..self.n_actions() {
                let w = self.p_x[x] * policy.prob(x, a);
                if w == 0.0 {
                    continue;
                }
                for s in 0..self.n_surrogates() {
                    let ws = w * self.p_s_given_xa[(x, a, s)];
                    if ws == 0.0 {
                        continue;
                    }
                    for (r, pr) in self.reward_support(x, a, s) {
                        let k = kernel(x, a, s, r);
                        debug_assert_eq!(k.len(), dim);
                        for (t, kv) in total.iter_mut().zip(&k) {
                            if !kv.is_finite() {
                                return Err(Error::Numeric(format!(
                                    "vector kernel non-finite at (x={x}, a={a}, s={s}, r={r})"
                                )));
                            }
                            *t += ws * pr * kv;
                        }
                    }
                }
            }
        }
        Ok(total)
    }

    /// Exact single-sample variance of a kernel.
    pub fn exact_kernel_variance<K>(&self, policy: &TabularPolicy, kernel: K) -> Result<f64>
    where
        K: Fn(usize, usize, usize, f64) -> f64 + Copy,
    {
        let mean = self.exact_estimator_expectation(policy, kernel)?;
        let second = self.exact_estimator_expectation(policy, |x, a, s, r| {
            let k = kernel(x, a, s, r);
            k * k
        })?;
        Ok(second - mean * mean)
    }

    /// Both sides of the weight-variance reduction identity:
    /// `V[w(x,a)] - V[w(x,s)] = E_{p(x) pi0(s|x)}[ V_{pi0(a|x,s)}[w(x,a)] ]`,
    /// everything enumerated under `p(x) pi0(a|x) p(s|x,a)`.
    pub fn weight_variance_identity(
        &self,
        pi0: &TabularPolicy,
        pi1: &TabularPolicy,
    ) -> Result<(f64, f64)> {
        let vanilla = |x: usize, a: usize| pi1.prob(x, a) / pi0.prob(x, a);

        let mean_wa = self.exact_estimator_expectation(pi0, |x, a, _, _| vanilla(x, a))?;
        let second_wa =
            self.exact_estimator_expectation(pi0, |x, a, _, _| vanilla(x, a).powi(2))?;
        let var_wa = second_wa - mean_wa * mean_wa;

        let mut surrogate = Array2::zeros((self.n_contexts(), self.n_surrogates()));
        for x in 0..self.n_contexts() {
            for s in 0..self.n_surrogates() {
                surrogate[(x, s)] = self.surrogate_weight(pi0, pi1, x, s)?;
            }
        }
        let mean_ws = self.exact_estimator_expectation(pi0, |x, _, s, _| surrogate[(x, s)])?;
        let second_ws =
            self.exact_estimator_expectation(pi0, |x, _, s, _| surrogate[(x, s)].powi(2))?;
        let var_ws = second_ws - mean_ws * mean_ws;

        let lhs = var_wa - var_ws;

        let mut rhs = 0.0;
        for x in 0..self.n_contexts() {
            let marginal0 = self.marginal_surrogate(pi0, x)?;
            for s in 0..self.n_surrogates() {
                let post = self.action_posterior(pi0, x, s)?;
                let mean: f64 = post
                    .iter()
                    .enumerate()
                    .map(|(a, &p)| p * vanilla(x, a))
                    .sum();
                let second: f64 = post
                    .iter()
                    .enumerate()
                    .map(|(a, &p)| p * vanilla(x, a).powi(2))
                    .sum();
                rhs += self.p_x[x] * marginal0[s] * (second - mean * mean);
            }
        }
        Ok((lhs, rhs))
    }

    /// Both sides of the noise-term reduction identity, with an explicit
    /// non-negative weighting table `sigma2(x, s)`:
    /// `E[w^2(x,a) sigma2(x,s)] - E[w^2(x,s) sigma2(x,s)]
    ///  = E_{p(x) pi0(s|x)}[ sigma2(x,s) V_{pi0(a|x,s)}[w(x,a)] ]`.
    pub fn noise_term_identity(
        &self,
        pi0: &TabularPolicy,
        pi1: &TabularPolicy,
        sigma2_xs: &Array2<f64>,
    ) -> Result<(f64, f64)> {
        if sigma2_xs.dim() != (self.n_contexts(), self.n_surrogates()) {
            return Err(Error::DimensionMismatch {
                context: "sigma2_xs",
                expected: self.n_contexts() * self.n_surrogates(),
                actual: sigma2_xs.len(),
            });
        }
        let vanilla = |x: usize, a: usize| pi1.prob(x, a) / pi0.prob(x, a);
        let mut surrogate = Array2::zeros((self.n_contexts(), self.n_surrogates()));
        for x in 0..self.n_contexts() {
            for s in 0..self.n_surrogates() {
                surrogate[(x, s)] = self.surrogate_weight(pi0, pi1, x, s)?;
            }
        }
        let term_a = self.exact_estimator_expectation(pi0, |x, a, s, _| {
            vanilla(x, a).powi(2) * sigma2_xs[(x, s)]
        })?;
        let term_s = self.exact_estimator_expectation(pi0, |x, _, s, _| {
            surrogate[(x, s)].powi(2) * sigma2_xs[(x, s)]
        })?;
        let lhs = term_a - term_s;

        let mut rhs = 0.0;
        for x in 0..self.n_contexts() {
            let marginal0 = self.marginal_surrogate(pi0, x)?;
            for s in 0..self.n_surrogates() {
                let post = self.action_posterior(pi0, x, s)?;
                let mean: f64 = post
                    .iter()
                    .enumerate()
                    .map(|(a, &p)| p * vanilla(x, a))
                    .sum();
                let second: f64 = post
                    .iter()
                    .enumerate()
                    .map(|(a, &p)| p * vanilla(x, a).powi(2))
                    .sum();
                rhs += self.p_x[x] * marginal0[s] * sigma2_xs[(x, s)] * (second - mean * mean);
            }
        }
        Ok((lhs, rhs))
    }

    /// The three enumerated terms of the DR single-sample variance:
    /// weighted reward noise, weight-times-model-gap variance, and the
    /// across-context value variance.
    pub fn dr_variance_terms(
        &self,
        pi0: &TabularPolicy,
        pi1: &TabularPolicy,
        q_hat: &Array2<f64>,
    ) -> Result<(f64, f64, f64)> {
        let nx = self.n_contexts();
        let na = self.n_actions();
        if q_hat.dim() != (nx, na) {
            return Err(Error::DimensionMismatch {
                context: "dr_variance_terms q_hat",
                expected: nx * na,
                actual: q_hat.len(),
            });
        }
        let vanilla = |x: usize, a: usize| pi1.prob(x, a) / pi0.prob(x, a);

        let mut term1 = 0.0;
        let mut term2 = 0.0;
        let mut value_mean = 0.0;
        let mut value_second = 0.0;
        for x in 0..nx {
            let mut inner_mean = 0.0;
            let mut inner_second = 0.0;
            let mut value_x = 0.0;
            for a in 0..na {
                let w = vanilla(x, a);
                term1 += self.p_x[x] * pi0.prob(x, a) * w * w * self.sigma2_xa(x, a);
                let gap = w * (self.q_xa(x, a) - q_hat[(x, a)]);
                inner_mean += pi0.prob(x, a) * gap;
                inner_second += pi0.prob(x, a) * gap * gap;
                value_x += pi1.prob(x, a) * self.q_xa(x, a);
            }
            term2 += self.p_x[x] * (inner_second - inner_mean * inner_mean);
            value_mean += self.p_x[x] * value_x;
            value_second += self.p_x[x] * value_x * value_x;
        }
        let term3 = value_second - value_mean * value_mean;
        Ok((term1, term2, term3))
    }

    /// One-hot context features with weights `p_x`, for fitting nuisance
    /// models on tabular data.
    pub fn contexts_onehot(&self) -> Result<ContextSet> {
        let nx = self.n_contexts();
        let features = Array2::from_shape_fn((nx, nx), |(i, j)| if i == j { 1.0 } else { 0.0 });
        ContextSet::new(features, self.p_x.clone())
    }

    /// Samples logged data; surrogates are recorded as one-hot vectors.
    pub fn sample_historical(
        &self,
        pi0: &TabularPolicy,
        n: usize,
        seed: u64,
    ) -> Result<HistoricalDataset> {
        if n == 0 {
            return Err(Error::EmptyDataset("tabular sample needs n >= 1"));
        }
        let mut rng = rng_from(derive_seed(seed, &[stream::HISTORICAL]));
        let ns = self.n_surrogates();
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let x = sample_categorical(&self.p_x, &mut rng);
            let a = sample_categorical(pi0.row(x), &mut rng);
            let ps: Vec<f64> = (0..ns).map(|s| self.p_s_given_xa[(x, a, s)]).collect();
            let s = sample_categorical(&ps, &mut rng);
            let support = self.reward_support(x, a, s);
            let probs: Vec<f64> = support.iter().map(|&(_, p)| p).collect();
            let r = support[sample_categorical(&probs, &mut rng)].0;
            let mut onehot = vec![0.0; ns];
            onehot[s] = 1.0;
            records.push(HistoricalRecord {
                user_index: x,
                action: a,
                logging_propensity: pi0.prob(x, a),
                short_rewards: onehot,
                long_reward: r,
            });
        }
        Ok(HistoricalDataset {
            records,
            provenance: "tabular-logging".into(),
        })
    }
}

fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Decodes a one-hot surrogate vector back to its index.
pub fn onehot_to_index(s: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in s.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginal_matches_brute_force_on_hand_entered_tables() {
        // 2 contexts x 3 actions x 2 surrogates with hand-entered tables.
        let p_x = vec![0.4, 0.6];
        let mut p_s = Array3::zeros((2, 3, 2));
        let entries = [
            ((0, 0), [0.3, 0.7]),
            ((0, 1), [0.5, 0.5]),
            ((0, 2), [0.9, 0.1]),
            ((1, 0), [0.2, 0.8]),
            ((1, 1), [0.6, 0.4]),
            ((1, 2), [0.25, 0.75]),
        ];
        for ((x, a), row) in entries {
            p_s[(x, a, 0)] = row[0];
            p_s[(x, a, 1)] = row[1];
        }
        let q = Array3::zeros((2, 3, 2));
        let noise = Array3::zeros((2, 3, 2));
        let env = TabularEnv::new(p_x, p_s, q, noise, RewardLaw::Deterministic).unwrap();
        let policy =
            TabularPolicy::from_rows(vec![vec![0.2, 0.3, 0.5], vec![0.1, 0.1, 0.8]]).unwrap();

        for x in 0..2 {
            let got = env.marginal_surrogate(&policy, x).unwrap();
            // Brute-force sum in the test itself.
            let mut want = vec![0.0; 2];
            for a in 0..3 {
                for s in 0..2 {
                    want[s] += policy.prob(x, a) * env.p_s_given_xa[(x, a, s)];
                }
            }
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-15);
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_special_cases() {
        let env = TabularEnv::random(3, 3, 4, 3, RewardLaw::Deterministic);
        // Deterministic policy on action 2 gives p(.|x, 2).
        let mut rows = Vec::new();
        for _ in 0..3 {
            rows.push(vec![0.0, 0.0, 1.0, 0.0]);
        }
        let det = TabularPolicy::from_rows(rows).unwrap();
        for x in 0..3 {
            let got = env.marginal_surrogate(&det, x).unwrap();
            for s in 0..3 {
                assert!((got[s] - env.p_s_given_xa[(x, 2, s)]).abs() < 1e-15);
            }
        }

        // Action-independent surrogates make every policy share one marginal.
        let mut env2 = env.clone();
        for x in 0..3 {
            for s in 0..3 {
                let v = env2.p_s_given_xa[(x, 0, s)];
                for a in 1..4 {
                    env2.p_s_given_xa[(x, a, s)] = v;
                }
            }
        }
        let p1 = env2.random_policy(5);
        let p2 = env2.random_policy(6);
        for x in 0..3 {
            let m1 = env2.marginal_surrogate(&p1, x).unwrap();
            let m2 = env2.marginal_surrogate(&p2, x).unwrap();
            for s in 0..3 {
                assert!((m1[s] - m2[s]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_kernel_expectation_is_the_constant() {
        let env = TabularEnv::random(4, 3, 4, 3, RewardLaw::TwoPoint);
        let pi0 = env.random_policy(1);
        let got = env
            .exact_estimator_expectation(&pi0, |_, _, _, _| 2.5)
            .unwrap();
        assert!((got - 2.5).abs() < 1e-12);
    }

    #[test]
    fn weight_variance_identity_trivial_cases() {
        let env = TabularEnv::random(5, 3, 4, 3, RewardLaw::Deterministic);
        let pi0 = env.random_policy(2);
        // pi1 = pi0: both sides zero.
        let (lhs, rhs) = env.weight_variance_identity(&pi0, &pi0).unwrap();
        assert!(lhs.abs() < 1e-12 && rhs.abs() < 1e-12);

        // Action-independent surrogates: w(x,s) = 1, lhs = V[w(x,a)] = rhs.
        let mut env2 = env.clone();
        for x in 0..3 {
            for s in 0..3 {
                let v = env2.p_s_given_xa[(x, 0, s)];
                for a in 1..4 {
                    env2.p_s_given_xa[(x, a, s)] = v;
                }
            }
        }
        let pi1 = env2.random_policy(3);
        for x in 0..3 {
            for s in 0..3 {
                let w = env2.surrogate_weight(&pi0, &pi1, x, s).unwrap();
                assert!((w - 1.0).abs() < 1e-12);
            }
        }
        let (lhs2, rhs2) = env2.weight_variance_identity(&pi0, &pi1).unwrap();
        assert!((lhs2 - rhs2).abs() < 1e-12);
        assert!(lhs2 >= 0.0);
    }

    #[test]
    fn weight_variance_identity_random_envs() {
        for seed in 0..10 {
            let env = TabularEnv::random(seed, 3, 4, 3, RewardLaw::TwoPoint);
            let pi0 = env.random_policy(seed + 100);
            let pi1 = env.random_policy(seed + 200);
            let (lhs, rhs) = env.weight_variance_identity(&pi0, &pi1).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12, "seed {seed}: {lhs} vs {rhs}");
            assert!(lhs >= -1e-12, "seed {seed}: lhs negative {lhs}");
        }
    }

    #[test]
    fn sampled_mean_matches_exact_value() {
        let env = TabularEnv::random(8, 3, 4, 3, RewardLaw::Bernoulli);
        let pi0 = env.random_policy(4);
        let n = 100_000;
        let data = env.sample_historical(&pi0, n, 9).unwrap();
        let mean = data.records.iter().map(|r| r.long_reward).sum::<f64>() / n as f64;
        let exact = env.exact_value(&pi0).unwrap();
        let var = mean * (1.0 - mean);
        let se = (var / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact}");
    }

    #[test]
    fn bayes_posterior_is_a_distribution() {
        let env = TabularEnv::random(11, 3, 5, 4, RewardLaw::Deterministic);
        let pi0 = env.random_policy(12);
        for x in 0..3 {
            for s in 0..4 {
                let post = env.action_posterior(&pi0, x, s).unwrap();
                assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(post.iter().all(|&p| p >= 0.0));
            }
        }
    }
}
