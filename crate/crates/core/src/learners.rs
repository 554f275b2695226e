//! Off-policy learning of the long-term value via policy gradients.
//!
//! Three gradient estimators (IPS-PG, DR-PG, LOPE-PG) drive a plain gradient
//! ascent loop over a softmax policy; the regression-based greedy policy is
//! the non-gradient baseline.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    dr_term, ips_term, lope_term, Encoder, NuisanceConfig, RewardModelBundle, SurrogateWeightModel,
};
use crate::models::{FittedRegressor, Mlp, RegressorKind};
use crate::seeding::{derive_seed, rng_from};
use crate::types::{ContextSet, HistoricalDataset, TabularPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyParameterization {
    #[default]
    Linear,
    Mlp3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientEstimatorKind {
    IpsPg,
    DrPg,
    LopePg,
}

impl std::fmt::Display for GradientEstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            GradientEstimatorKind::IpsPg => "ips_pg",
            GradientEstimatorKind::DrPg => "dr_pg",
            GradientEstimatorKind::LopePg => "lope_pg",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub gradient_estimator: GradientEstimatorKind,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    /// `None` runs full-batch gradients.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub parameterization: PolicyParameterization,
    #[serde(default = "d_width")]
    pub mlp_hidden_width: usize,
    #[serde(default)]
    pub nuisance: NuisanceConfig,
}

fn d_lr() -> f64 {
    0.05
}
fn d_epochs() -> usize {
    200
}
fn d_width() -> usize {
    32
}

impl LearnerConfig {
    pub fn new(kind: GradientEstimatorKind) -> Self {
        Self {
            gradient_estimator: kind,
            learning_rate: d_lr(),
            epochs: d_epochs(),
            batch_size: None,
            seed: 0,
            parameterization: PolicyParameterization::default(),
            mlp_hidden_width: d_width(),
            nuisance: NuisanceConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Softmax policy `pi_theta(a|x)` with either a linear or a 3-hidden-layer
/// network parameterization; parameters are exposed as one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicyModel {
    dim_x: usize,
    n_actions: usize,
    kind: PolicyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "parameterization", rename_all = "snake_case")]
enum PolicyKind {
    /// Flat `dim_x x n_actions` weights, row-major over feature index.
    Linear { weights: Vec<f64> },
    Mlp3 { net: Mlp },
}

impl SoftmaxPolicyModel {
    /// Zero-initialized linear policy (uniform over actions).
    pub fn new_linear(dim_x: usize, n_actions: usize) -> Self {
        Self {
            dim_x,
            n_actions,
            kind: PolicyKind::Linear {
                weights: vec![0.0; dim_x * n_actions],
            },
        }
    }

    /// Three-hidden-layer policy network. Hidden layers are seeded-random,
    /// the output layer starts at zero, so the initial policy is uniform.
    pub fn new_mlp3(dim_x: usize, n_actions: usize, hidden_width: usize, seed: u64) -> Self {
        let dims = [dim_x, hidden_width, hidden_width, hidden_width, n_actions];
        Self {
            dim_x,
            n_actions,
            kind: PolicyKind::Mlp3 {
                net: Mlp::new(&dims, seed, true),
            },
        }
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn param_len(&self) -> usize {
        match &self.kind {
            PolicyKind::Linear { weights } => weights.len(),
            PolicyKind::Mlp3 { net } => net.param_len(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match &self.kind {
            PolicyKind::Linear { weights } => weights,
            PolicyKind::Mlp3 { net } => net.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match &mut self.kind {
            PolicyKind::Linear { weights } => weights,
            PolicyKind::Mlp3 { net } => net.params_mut(),
        }
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            PolicyKind::Linear { weights } => {
                let mut out = vec![0.0; self.n_actions];
                for (d, &xv) in x.iter().enumerate() {
                    let row = &weights[d * self.n_actions..(d + 1) * self.n_actions];
                    for (o, &w) in out.iter_mut().zip(row) {
                        *o += xv * w;
                    }
                }
                out
            }
            PolicyKind::Mlp3 { net } => net.forward(x),
        }
    }

    /// `pi_theta(.|x)` with max-subtracted softmax.
    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let mut logits = self.logits(x);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in &mut logits {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in &mut logits {
            *v /= sum;
        }
        logits
    }

    /// Adds `sum_a coeffs[a] * s_theta(x, a)` to `out`.
    ///
    /// Every gradient estimator reduces to such a weighted score sum: the
    /// logged-action terms use a one-hot coefficient vector and the model
    /// terms use `pi_theta(a|x) * value(a)`. Since
    /// `s_theta(x,a) = d(logits)/d(theta) . (onehot(a) - pi)`, the whole sum
    /// backpropagates in one pass with cotangent
    /// `coeffs - (sum_a coeffs[a]) * pi`.
    pub fn add_weighted_scores(&self, x: &[f64], coeffs: &[f64], out: &mut [f64]) {
        let probs = self.probs(x);
        let total: f64 = coeffs.iter().sum();
        let cotangent: Vec<f64> = coeffs
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| c - total * p)
            .collect();
        match &self.kind {
            PolicyKind::Linear { .. } => {
                for (d, &xv) in x.iter().enumerate() {
                    let row = &mut out[d * self.n_actions..(d + 1) * self.n_actions];
                    for (o, &ct) in row.iter_mut().zip(&cotangent) {
                        *o += xv * ct;
                    }
                }
            }
            PolicyKind::Mlp3 { net } => {
                let cache = net.forward_cache(x);
                net.backward(&cache, &cotangent, out);
            }
        }
    }

    /// Convenience wrapper: adds `coef * s_theta(x, a)` to `out`.
    pub fn add_score(&self, x: &[f64], action: usize, coef: f64, out: &mut [f64]) {
        let mut coeffs = vec![0.0; self.n_actions];
        coeffs[action] = coef;
        self.add_weighted_scores(x, &coeffs, out);
    }

    /// Gradient ascent step `theta += lr * grad`.
    pub fn ascend(&mut self, grad: &[f64], lr: f64) {
        for (p, g) in self.params_mut().iter_mut().zip(grad) {
            *p += lr * g;
        }
    }

    /// Materializes the policy over a finite population.
    pub fn to_tabular(&self, contexts: &ContextSet) -> Result<TabularPolicy> {
        if contexts.dim_x() != self.dim_x {
            return Err(Error::DimensionMismatch {
                context: "SoftmaxPolicyModel::to_tabular",
                expected: self.dim_x,
                actual: contexts.dim_x(),
            });
        }
        let rows = (0..contexts.n_users())
            .map(|u| self.probs(&contexts.feature_row(u).to_vec()))
            .collect();
        TabularPolicy::from_rows(rows)
    }

    pub fn save_json<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// The policy score function `s_theta(x, a) = grad_theta log pi_theta(a|x)`.
pub fn score_function(model: &SoftmaxPolicyModel, x: &[f64], action: usize) -> Vec<f64> {
    let mut out = vec![0.0; model.param_len()];
    model.add_score(x, action, 1.0, &mut out);
    out
}

/// IPS policy gradient `(1/n) sum w_theta(x_i,a_i) r_i s_theta(x_i,a_i)`.
pub fn grad_ips_pg(
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    model: &SoftmaxPolicyModel,
) -> Result<Vec<f64>> {
    if dh.is_empty() {
        return Err(Error::EmptyDataset("grad_ips_pg needs records"));
    }
    dh.check_support()?;
    let n = dh.len() as f64;
    let mut out = vec![0.0; model.param_len()];
    for rec in &dh.records {
        let x = enc.contexts().feature_row(rec.user_index).to_vec();
        let w = model.probs(&x)[rec.action] / rec.logging_propensity;
        model.add_score(&x, rec.action, ips_term(w, rec.long_reward) / n, &mut out);
    }
    Ok(out)
}

/// DR policy gradient with a tabulated reward model `q_hat[(user, action)]`.
pub fn grad_dr_pg(
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    model: &SoftmaxPolicyModel,
    q_hat: &Array2<f64>,
) -> Result<Vec<f64>> {
    if dh.is_empty() {
        return Err(Error::EmptyDataset("grad_dr_pg needs records"));
    }
    dh.check_support()?;
    let n = dh.len() as f64;
    let n_actions = model.n_actions();
    let mut out = vec![0.0; model.param_len()];
    let mut coeffs = vec![0.0; n_actions];
    for rec in &dh.records {
        let x = enc.contexts().feature_row(rec.user_index).to_vec();
        let probs = model.probs(&x);
        let w = probs[rec.action] / rec.logging_propensity;
        let residual = rec.long_reward - q_hat[(rec.user_index, rec.action)];
        // Logged-action term plus the model term in one weighted-score pass.
        for (a, c) in coeffs.iter_mut().enumerate() {
            *c = probs[a] * q_hat[(rec.user_index, a)] / n;
        }
        coeffs[rec.action] += w * residual / n;
        model.add_weighted_scores(&x, &coeffs, &mut out);
    }
    Ok(out)
}

/// Precomputed, theta-independent pieces of the LOPE gradient.
pub struct LopeGradPrep {
    /// `hhat(x_i, a_i, s_i)` per record.
    pub h_hat_per_record: Vec<f64>,
    /// `hbar(user, action)` tabulated over the population.
    pub m_hat: Array2<f64>,
    /// `pi0hat(a | x_i, s_i)` per record.
    pub posteriors: Vec<Vec<f64>>,
}

impl LopeGradPrep {
    pub fn build(
        dh: &HistoricalDataset,
        enc: &Encoder<'_>,
        weights: &SurrogateWeightModel,
        bundle: &RewardModelBundle,
        n_actions: usize,
    ) -> Result<Self> {
        let h_hat = bundle
            .h_hat
            .as_ref()
            .ok_or(Error::MissingComponent("bundle.h_hat"))?;
        let h_bar = bundle
            .h_bar
            .as_ref()
            .ok_or(Error::MissingComponent("bundle.h_bar"))?;
        let h_hat_per_record = dh
            .records
            .iter()
            .map(|rec| h_hat.predict(&enc.xas(rec.user_index, rec.action, &rec.short_rewards)))
            .collect();
        let mut m_hat = Array2::zeros((enc.contexts().n_users(), n_actions));
        for u in 0..enc.contexts().n_users() {
            for a in 0..n_actions {
                m_hat[(u, a)] = h_bar.value(enc, u, a);
            }
        }
        let posteriors = dh
            .records
            .iter()
            .map(|rec| weights.posterior_probs(enc, rec.user_index, &rec.short_rewards))
            .collect();
        Ok(Self {
            h_hat_per_record,
            m_hat,
            posteriors,
        })
    }
}

/// LOPE policy gradient. The action classifier behind the surrogate weights
/// is fitted once and reused at every theta; only the target-policy row in
/// the Bayes mixture changes during training.
pub fn grad_lope_pg(
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    model: &SoftmaxPolicyModel,
    weights: &SurrogateWeightModel,
    bundle: &RewardModelBundle,
) -> Result<Vec<f64>> {
    let prep = LopeGradPrep::build(dh, enc, weights, bundle, model.n_actions())?;
    grad_lope_pg_prepared(dh, enc, model, weights, &prep)
}

pub fn grad_lope_pg_prepared(
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    model: &SoftmaxPolicyModel,
    weights: &SurrogateWeightModel,
    prep: &LopeGradPrep,
) -> Result<Vec<f64>> {
    if dh.is_empty() {
        return Err(Error::EmptyDataset("grad_lope_pg needs records"));
    }
    dh.check_support()?;
    let n = dh.len() as f64;
    let n_actions = model.n_actions();
    let mut out = vec![0.0; model.param_len()];
    let mut coeffs = vec![0.0; n_actions];
    for (i, rec) in dh.records.iter().enumerate() {
        let x = enc.contexts().feature_row(rec.user_index).to_vec();
        let probs = model.probs(&x);
        let logging_row = weights.logging.row(rec.user_index);
        let mut w_theta = 0.0;
        for (a, &post) in prep.posteriors[i].iter().enumerate() {
            w_theta += post * probs[a] / logging_row[a];
        }
        let residual = rec.long_reward - prep.h_hat_per_record[i];
        for (a, c) in coeffs.iter_mut().enumerate() {
            *c = probs[a] * prep.m_hat[(rec.user_index, a)] / n;
        }
        coeffs[rec.action] += w_theta * residual / n;
        model.add_weighted_scores(&x, &coeffs, &mut out);
    }
    Ok(out)
}

/// Value estimate matching each gradient estimator, evaluated at the current
/// theta (used for the per-epoch trace).
fn estimate_value_at(
    kind: GradientEstimatorKind,
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    model: &SoftmaxPolicyModel,
    q_hat: Option<&Array2<f64>>,
    weights: Option<&SurrogateWeightModel>,
    prep: Option<&LopeGradPrep>,
) -> f64 {
    let n = dh.len() as f64;
    let n_actions = model.n_actions();
    let mut sum = 0.0;
    for (i, rec) in dh.records.iter().enumerate() {
        let x = enc.contexts().feature_row(rec.user_index).to_vec();
        let probs = model.probs(&x);
        match kind {
            GradientEstimatorKind::IpsPg => {
                let w = probs[rec.action] / rec.logging_propensity;
                sum += ips_term(w, rec.long_reward);
            }
            GradientEstimatorKind::DrPg => {
                let q = q_hat.expect("dr value needs q_hat");
                let w = probs[rec.action] / rec.logging_propensity;
                let q_pi: f64 = (0..n_actions)
                    .map(|a| probs[a] * q[(rec.user_index, a)])
                    .sum();
                sum += dr_term(w, rec.long_reward, q[(rec.user_index, rec.action)], q_pi);
            }
            GradientEstimatorKind::LopePg => {
                let weights = weights.expect("lope value needs weights");
                let prep = prep.expect("lope value needs prep");
                let logging_row = weights.logging.row(rec.user_index);
                let mut w_theta = 0.0;
                for (a, &post) in prep.posteriors[i].iter().enumerate() {
                    w_theta += post * probs[a] / logging_row[a];
                }
                let h_pi: f64 = (0..n_actions)
                    .map(|a| probs[a] * prep.m_hat[(rec.user_index, a)])
                    .sum();
                sum += lope_term(w_theta, rec.long_reward, prep.h_hat_per_record[i], h_pi);
            }
        }
    }
    sum / n
}

/// Training output: the learned policy and the per-epoch estimated-value
/// trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SoftmaxPolicyModel,
    pub value_trace: Vec<f64>,
}

/// Gradient-ascent training loop. Nuisances are fitted once before the loop;
/// theta starts at zero (uniform policy).
pub fn train_policy(
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    logging: &TabularPolicy,
    n_actions: usize,
    config: &LearnerConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dh.is_empty() {
        return Err(Error::EmptyDataset("train_policy needs records"));
    }
    dh.check_support()?;

    let mut model = match config.parameterization {
        PolicyParameterization::Linear => {
            SoftmaxPolicyModel::new_linear(enc.dim_x(), n_actions)
        }
        PolicyParameterization::Mlp3 => SoftmaxPolicyModel::new_mlp3(
            enc.dim_x(),
            n_actions,
            config.mlp_hidden_width,
            derive_seed(config.seed, &[31]),
        ),
    };

    // Fit nuisances once.
    let (q_table, weights, prep) = match config.gradient_estimator {
        GradientEstimatorKind::IpsPg => (None, None, None),
        GradientEstimatorKind::DrPg => {
            let bundle = crate::estimators::fit_reward_models(dh, enc, &config.nuisance, None)?;
            let q = bundle
                .q_hat_xa
                .as_ref()
                .ok_or(Error::MissingComponent("q_hat_xa"))?;
            (Some(tabulate_xa(q, enc, n_actions)), None, None)
        }
        GradientEstimatorKind::LopePg => {
            let bundle = crate::estimators::fit_reward_models(dh, enc, &config.nuisance, None)?;
            // The stored target policy is irrelevant during learning; only
            // the posterior and the logging rows feed the per-theta weights.
            let weights = crate::estimators::estimate_surrogate_weights(
                dh,
                enc,
                logging,
                logging,
                None,
                &config.nuisance,
            )?;
            let prep = LopeGradPrep::build(dh, enc, &weights, &bundle, n_actions)?;
            (None, Some(weights), Some(prep))
        }
    };

    let n = dh.len();
    let batch = config.batch_size.unwrap_or(n).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(derive_seed(config.seed, &[32]));
    let mut value_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if batch == n {
            let grad = gradient_for(
                config.gradient_estimator,
                dh,
                enc,
                &model,
                q_table.as_ref(),
                weights.as_ref(),
                prep.as_ref(),
                None,
            )?;
            check_finite(&grad, epoch)?;
            model.ascend(&grad, config.learning_rate);
        } else {
            for i in (1..n).rev() {
                let j = rand::Rng::random_range(&mut rng, 0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(batch) {
                let grad = gradient_for(
                    config.gradient_estimator,
                    dh,
                    enc,
                    &model,
                    q_table.as_ref(),
                    weights.as_ref(),
                    prep.as_ref(),
                    Some(chunk),
                )?;
                check_finite(&grad, epoch)?;
                model.ascend(&grad, config.learning_rate);
            }
        }
        value_trace.push(estimate_value_at(
            config.gradient_estimator,
            dh,
            enc,
            &model,
            q_table.as_ref(),
            weights.as_ref(),
            prep.as_ref(),
        ));
    }

    Ok(TrainOutcome { model, value_trace })
}

fn check_finite(grad: &[f64], epoch: usize) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite policy gradient at epoch {epoch}"
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gradient_for(
    kind: GradientEstimatorKind,
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    model: &SoftmaxPolicyModel,
    q_table: Option<&Array2<f64>>,
    weights: Option<&SurrogateWeightModel>,
    prep: Option<&LopeGradPrep>,
    subset: Option<&[usize]>,
) -> Result<Vec<f64>> {
    // Mini-batches materialize a subset dataset; full-batch takes the fast
    // path with no copying.
    let scratch;
    let (data, prep_view) = match subset {
        None => (dh, prep),
        Some(idx) => {
            scratch = subset_data(dh, prep, idx);
            (&scratch.0, scratch.1.as_ref())
        }
    };
    match kind {
        GradientEstimatorKind::IpsPg => grad_ips_pg(data, enc, model),
        GradientEstimatorKind::DrPg => {
            grad_dr_pg(data, enc, model, q_table.expect("q_table fitted"))
        }
        GradientEstimatorKind::LopePg => grad_lope_pg_prepared(
            data,
            enc,
            model,
            weights.expect("weights fitted"),
            prep_view.expect("prep built"),
        ),
    }
}

fn subset_data(
    dh: &HistoricalDataset,
    prep: Option<&LopeGradPrep>,
    idx: &[usize],
) -> (HistoricalDataset, Option<LopeGradPrep>) {
    let records = idx.iter().map(|&i| dh.records[i].clone()).collect();
    let sub = HistoricalDataset {
        records,
        provenance: dh.provenance.clone(),
    };
    let sub_prep = prep.map(|p| LopeGradPrep {
        h_hat_per_record: idx.iter().map(|&i| p.h_hat_per_record[i]).collect(),
        m_hat: p.m_hat.clone(),
        posteriors: idx.iter().map(|&i| p.posteriors[i].clone()).collect(),
    });
    (sub, sub_prep)
}

/// Tabulates a fitted `(x, a)` regressor over the whole population.
pub fn tabulate_xa(reg: &FittedRegressor, enc: &Encoder<'_>, n_actions: usize) -> Array2<f64> {
    let mut table = Array2::zeros((enc.contexts().n_users(), n_actions));
    for u in 0..enc.contexts().n_users() {
        for a in 0..n_actions {
            table[(u, a)] = reg.predict(&enc.xa(u, a));
        }
    }
    table
}

/// Regression-based baseline: fit `qhat(x, a)` and act greedily (ties break
/// toward the lowest action index).
pub fn reg_based_policy(
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    n_actions: usize,
    q_family: &RegressorKind,
    seed: u64,
) -> Result<TabularPolicy> {
    if dh.is_empty() {
        return Err(Error::EmptyDataset("reg_based_policy needs records"));
    }
    let rows: Vec<Vec<f64>> = dh
        .records
        .iter()
        .map(|r| enc.xa(r.user_index, r.action))
        .collect();
    let rewards: Vec<f64> = dh.records.iter().map(|r| r.long_reward).collect();
    let q = FittedRegressor::fit(q_family, &rows, &rewards, derive_seed(seed, &[33]))?;
    let table = tabulate_xa(&q, enc, n_actions);
    let mut policy_rows = Vec::with_capacity(enc.contexts().n_users());
    for u in 0..enc.contexts().n_users() {
        let mut best = 0usize;
        let mut best_q = f64::NEG_INFINITY;
        for a in 0..n_actions {
            if table[(u, a)] > best_q {
                best_q = table[(u, a)];
                best = a;
            }
        }
        let mut row = vec![0.0; n_actions];
        row[best] = 1.0;
        policy_rows.push(row);
    }
    TabularPolicy::from_rows(policy_rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::HistoricalRecord;
    use ndarray::Array2;

    fn toy_contexts(n_users: usize, dim_x: usize) -> ContextSet {
        let features = Array2::from_shape_fn((n_users, dim_x), |(i, j)| {
            ((i * dim_x + j + 1) as f64 * 0.43).sin()
        });
        ContextSet::uniform(features).unwrap()
    }

    fn toy_dataset(n: usize, n_users: usize, n_actions: usize) -> HistoricalDataset {
        let records = (0..n)
            .map(|i| HistoricalRecord {
                user_index: i % n_users,
                action: (i * 3) % n_actions,
                logging_propensity: 1.0 / n_actions as f64,
                short_rewards: vec![(i as f64 * 0.21).cos(), (i as f64 * 0.13).sin()],
                long_reward: ((i % 5) as f64) - 2.0,
            })
            .collect();
        HistoricalDataset {
            records,
            provenance: "toy".into(),
        }
    }

    #[test]
    fn linear_score_closed_form_at_uniform() {
        let model = SoftmaxPolicyModel::new_linear(3, 4);
        let x = [0.5, -1.0, 2.0];
        let s = score_function(&model, &x, 2);
        for d in 0..3 {
            for a in 0..4 {
                let want = x[d] * (if a == 2 { 1.0 } else { 0.0 } - 0.25);
                assert!((s[d * 4 + a] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn score_identity_sums_to_zero() {
        for seed in [1u64, 2, 3] {
            let mut model = SoftmaxPolicyModel::new_linear(3, 5);
            let mut rng = crate::seeding::rng_from(seed);
            for p in model.params_mut() {
                *p = rand::Rng::random_range(&mut rng, -1.0..1.0);
            }
            let x = [0.3, -0.7, 1.2];
            let probs = model.probs(&x);
            let mut acc = vec![0.0; model.param_len()];
            for a in 0..5 {
                model.add_score(&x, a, probs[a], &mut acc);
            }
            let max = acc.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(max <= 1e-8, "score identity violation {max}");
        }
    }

    #[test]
    fn score_matches_finite_differences() {
        for (kind, seed) in [
            (PolicyParameterization::Linear, 7u64),
            (PolicyParameterization::Mlp3, 8),
        ] {
            let mut model = match kind {
                PolicyParameterization::Linear => SoftmaxPolicyModel::new_linear(3, 4),
                PolicyParameterization::Mlp3 => SoftmaxPolicyModel::new_mlp3(3, 4, 6, seed),
            };
            let mut rng = crate::seeding::rng_from(seed);
            for p in model.params_mut() {
                *p += rand::Rng::random_range(&mut rng, -0.5..0.5);
            }
            let x = [0.4, -0.2, 0.9];
            let action = 1;
            let analytic = score_function(&model, &x, action);
            let step = 1e-5;
            let mut max_rel = 0.0_f64;
            for p in 0..model.param_len() {
                let mut plus = model.clone();
                plus.params_mut()[p] += step;
                let mut minus = model.clone();
                minus.params_mut()[p] -= step;
                let fd =
                    (plus.probs(&x)[action].ln() - minus.probs(&x)[action].ln()) / (2.0 * step);
                let denom = analytic[p].abs().max(fd.abs()).max(1e-4);
                max_rel = max_rel.max((analytic[p] - fd).abs() / denom);
            }
            assert!(max_rel <= 1e-4, "{kind:?}: relative error {max_rel}");
        }
    }

    #[test]
    fn zero_rewards_give_zero_gradients() {
        let contexts = toy_contexts(6, 3);
        let enc = Encoder::new(&contexts, None, 4);
        let mut dh = toy_dataset(30, 6, 4);
        for rec in &mut dh.records {
            rec.long_reward = 0.0;
        }
        let model = SoftmaxPolicyModel::new_linear(3, 4);
        let g = grad_ips_pg(&dh, &enc, &model).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let q = Array2::zeros((6, 4));
        let g2 = grad_dr_pg(&dh, &enc, &model, &q).unwrap();
        assert!(g2.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn on_policy_ips_gradient_is_reinforce() {
        let contexts = toy_contexts(5, 2);
        let n_actions = 3;
        let enc = Encoder::new(&contexts, None, n_actions);
        let model = SoftmaxPolicyModel::new_linear(2, n_actions);
        // Logged under the uniform policy = the model at theta 0.
        let dh = toy_dataset(40, 5, n_actions);
        let g = grad_ips_pg(&dh, &enc, &model).unwrap();
        // REINFORCE estimate with unit weights.
        let mut want = vec![0.0; model.param_len()];
        for rec in &dh.records {
            let x = contexts.feature_row(rec.user_index).to_vec();
            model.add_score(&x, rec.action, rec.long_reward / dh.len() as f64, &mut want);
        }
        for (a, b) in g.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dr_pg_with_zero_model_is_ips_pg() {
        let contexts = toy_contexts(6, 3);
        let enc = Encoder::new(&contexts, None, 4);
        let mut model = SoftmaxPolicyModel::new_linear(3, 4);
        let mut rng = crate::seeding::rng_from(5);
        for p in model.params_mut() {
            *p = rand::Rng::random_range(&mut rng, -0.5..0.5);
        }
        let dh = toy_dataset(25, 6, 4);
        let q = Array2::zeros((6, 4));
        let a = grad_ips_pg(&dh, &enc, &model).unwrap();
        let b = grad_dr_pg(&dh, &enc, &model, &q).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_uniform_policy() {
        let contexts = toy_contexts(5, 2);
        let enc = Encoder::new(&contexts, None, 3);
        let dh = toy_dataset(20, 5, 3);
        let logging = TabularPolicy::uniform(5, 3).unwrap();
        let mut cfg = LearnerConfig::new(GradientEstimatorKind::IpsPg);
        cfg.epochs = 5;
        cfg.learning_rate = 0.0;
        let out = train_policy(&dh, &enc, &logging, 3, &cfg).unwrap();
        let tab = out.model.to_tabular(&contexts).unwrap();
        for u in 0..5 {
            for a in 0..3 {
                assert!((tab.prob(u, a) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert_eq!(out.value_trace.len(), 5);
    }

    #[test]
    fn training_is_deterministic() {
        let contexts = toy_contexts(6, 3);
        let enc = Encoder::new(&contexts, None, 4);
        let dh = toy_dataset(40, 6, 4);
        let logging = TabularPolicy::uniform(6, 4).unwrap();
        let mut cfg = LearnerConfig::new(GradientEstimatorKind::DrPg);
        cfg.epochs = 10;
        cfg.batch_size = Some(16);
        cfg.seed = 77;
        let a = train_policy(&dh, &enc, &logging, 4, &cfg).unwrap();
        let b = train_policy(&dh, &enc, &logging, 4, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.value_trace, b.value_trace);
    }

    #[test]
    fn reg_based_policy_is_one_hot_and_ties_break_low() {
        let contexts = toy_contexts(5, 2);
        let enc = Encoder::new(&contexts, None, 3);
        // Constant rewards: the fitted q is constant across actions, so the
        // tie rule must pick action 0 for every user.
        let mut dh = toy_dataset(30, 5, 3);
        for rec in &mut dh.records {
            rec.long_reward = 1.0;
        }
        let policy =
            reg_based_policy(&dh, &enc, 3, &RegressorKind::Ridge { l2: 1.0 }, 0).unwrap();
        for u in 0..5 {
            assert_eq!(policy.prob(u, 0), 1.0);
            for a in 1..3 {
                assert_eq!(policy.prob(u, a), 0.0);
            }
        }
    }
}
