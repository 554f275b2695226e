//! Long-term value estimators: AVG, LCI, IPS, DR, and LOPE.
//!
//! Each estimator is the mean of a per-record term; the term functions
//! ([`ips_term`], [`dr_term`], [`lope_term`]) are shared with the exactness
//! suite, which takes their expectation by enumeration instead of averaging
//! samples.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::envs::tabular::onehot_to_index;
use crate::envs::SyntheticEnv;
use crate::error::{Error, Result};
use crate::models::{
    fit_softmax_classifier, FittedRegressor, RegressorKind, SoftmaxClassifier, SoftmaxConfig,
};
use crate::seeding::derive_seed;
use crate::types::{
    ContextSet, EstimateReport, HistoricalDataset, LongTermOutcomes, ShortTermDataset,
    TabularPolicy,
};

/// Per-record IPS term `w(x,a) * r`.
pub fn ips_term(weight: f64, r: f64) -> f64 {
    weight * r
}

/// Per-record DR term `w(x,a) * (r - qhat(x,a)) + qhat(x, pi1)`.
pub fn dr_term(weight: f64, r: f64, q_hat_xa: f64, q_hat_pi1: f64) -> f64 {
    weight * (r - q_hat_xa) + q_hat_pi1
}

/// Per-record LOPE term `w(x,s) * (r - hhat(x,a,s)) + hhat(x, pi1)`.
pub fn lope_term(surrogate_weight: f64, r: f64, h_hat: f64, h_bar_pi1: f64) -> f64 {
    surrogate_weight * (r - h_hat) + h_bar_pi1
}

/// Feature maps for the nuisance models over a finite population.
///
/// Contexts enter as raw features; actions enter one-hot, plus the bilinear
/// interaction of context features with the action embedding whenever
/// embeddings exist (the tabular oracle has none). The interaction block is
/// what lets a ridge model represent context-action reward structure.
#[derive(Debug, Clone, Copy)]
pub struct Encoder<'a> {
    contexts: &'a ContextSet,
    embeddings: Option<&'a Array2<f64>>,
    n_actions: usize,
}

impl<'a> Encoder<'a> {
    pub fn new(
        contexts: &'a ContextSet,
        embeddings: Option<&'a Array2<f64>>,
        n_actions: usize,
    ) -> Self {
        if let Some(e) = embeddings {
            debug_assert_eq!(e.nrows(), n_actions);
        }
        Self {
            contexts,
            embeddings,
            n_actions,
        }
    }

    pub fn contexts(&self) -> &'a ContextSet {
        self.contexts
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim_x(&self) -> usize {
        self.contexts.dim_x()
    }

    fn x(&self, user: usize) -> Vec<f64> {
        self.contexts.feature_row(user).to_vec()
    }

    /// `x (+) s`.
    pub fn xs(&self, user: usize, s: &[f64]) -> Vec<f64> {
        let mut out = self.x(user);
        out.extend_from_slice(s);
        out
    }

    pub fn xs_dim(&self, dim_s: usize) -> usize {
        self.dim_x() + dim_s
    }

    /// `x (+) onehot(a) [(+) x tensor e_a]`.
    pub fn xa(&self, user: usize, action: usize) -> Vec<f64> {
        let mut out = self.x(user);
        let offset = out.len();
        out.extend(std::iter::repeat(0.0).take(self.n_actions));
        out[offset + action] = 1.0;
        if let Some(embeddings) = self.embeddings {
            let e = embeddings.row(action);
            let x = self.contexts.feature_row(user);
            for &xv in x.iter() {
                for &ev in e.iter() {
                    out.push(xv * ev);
                }
            }
        }
        out
    }

    pub fn xa_dim(&self) -> usize {
        let interaction = self
            .embeddings
            .map(|e| e.ncols() * self.dim_x())
            .unwrap_or(0);
        self.dim_x() + self.n_actions + interaction
    }

    /// `x (+) onehot(a) [(+) x tensor e_a] (+) s`.
    pub fn xas(&self, user: usize, action: usize, s: &[f64]) -> Vec<f64> {
        let mut out = self.xa(user, action);
        out.extend_from_slice(s);
        out
    }

    pub fn xas_dim(&self, dim_s: usize) -> usize {
        self.xa_dim() + dim_s
    }
}

/// Which value estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Avg,
    Lci,
    Ips,
    Dr,
    Lope,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            EstimatorKind::Avg => "avg",
            EstimatorKind::Lci => "lci",
            EstimatorKind::Ips => "ips",
            EstimatorKind::Dr => "dr",
            EstimatorKind::Lope => "lope",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(EstimatorKind::Avg),
            "lci" => Ok(EstimatorKind::Lci),
            "ips" => Ok(EstimatorKind::Ips),
            "dr" => Ok(EstimatorKind::Dr),
            "lope" => Ok(EstimatorKind::Lope),
            other => Err(Error::InvalidConfig(format!(
                "unknown estimator '{other}' (expected avg, lci, ips, dr, or lope)"
            ))),
        }
    }
}

/// How `hbar(x, a) ~ E_{p(s|x,a)}[hhat(x,a,s)]` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HbarMode {
    /// Fit an auxiliary regressor on `hhat(x_i, a_i, s_i)` targets from the
    /// historical data; consistent without touching the environment.
    AuxiliaryFit,
    /// Average `hhat` over fresh surrogate draws from the environment
    /// (ablation mode for the synthetic harness).
    EnvMonteCarlo { samples: usize },
}

impl Default for HbarMode {
    fn default() -> Self {
        HbarMode::AuxiliaryFit
    }
}

/// Nuisance-estimation configuration shared by DR, LCI, and LOPE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    #[serde(default)]
    pub q_family: RegressorKind,
    #[serde(default)]
    pub h_family: RegressorKind,
    #[serde(default)]
    pub classifier: SoftmaxConfig,
    #[serde(default)]
    pub hbar_mode: HbarMode,
    /// When set, short-term experiment data augments the surrogate-weight
    /// estimate: a discriminator between historical and short-term `(x, s)`
    /// samples estimates the marginal density ratio `pi1(s|x)/pi0(s|x)`
    /// directly.
    #[serde(default)]
    pub use_short_experiment_for_weights: bool,
    /// Optional importance-weight clip; `None` means no clipping.
    #[serde(default)]
    pub max_weight: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            q_family: RegressorKind::default(),
            h_family: RegressorKind::default(),
            classifier: SoftmaxConfig::default(),
            hbar_mode: HbarMode::default(),
            use_short_experiment_for_weights: false,
            max_weight: None,
            seed: 0,
        }
    }
}

fn clip(w: f64, max_weight: Option<f64>) -> f64 {
    match max_weight {
        Some(m) => w.min(m),
        None => w,
    }
}

/// The model of `hbar(x, a)`: either an auxiliary regressor or a fully
/// tabulated per-user table.
#[derive(Debug, Clone, PartialEq)]
pub enum HbarModel {
    Fitted(FittedRegressor),
    Table(Array2<f64>),
}

impl HbarModel {
    pub fn value(&self, enc: &Encoder<'_>, user: usize, action: usize) -> f64 {
        match self {
            HbarModel::Fitted(reg) => reg.predict(&enc.xa(user, action)),
            HbarModel::Table(t) => t[(user, action)],
        }
    }
}

/// Reward regressors fitted on the historical data only.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardModelBundle {
    /// `hhat(x, a, s)` — the action-effect regressor of LOPE.
    pub h_hat: Option<FittedRegressor>,
    /// `hbar(x, a)` — auxiliary model of `E_{p(s|x,a)}[hhat(x,a,s)]`.
    pub h_bar: Option<HbarModel>,
    /// `qhat(x, a)` — DR's reward model.
    pub q_hat_xa: Option<FittedRegressor>,
    /// `qhat(x, s)` — LCI's long-term reward predictor.
    pub q_hat_xs: Option<FittedRegressor>,
}

/// Fits every reward model in the bundle on the historical data.
///
/// `env` is only consulted in the `EnvMonteCarlo` hbar mode.
pub fn fit_reward_models(
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    cfg: &NuisanceConfig,
    env: Option<&SyntheticEnv>,
) -> Result<RewardModelBundle> {
    if dh.is_empty() {
        return Err(Error::EmptyDataset("fit_reward_models needs records"));
    }
    let rewards: Vec<f64> = dh.records.iter().map(|r| r.long_reward).collect();

    let xa_rows: Vec<Vec<f64>> = dh
        .records
        .iter()
        .map(|r| enc.xa(r.user_index, r.action))
        .collect();
    let q_hat_xa = FittedRegressor::fit(
        &cfg.q_family,
        &xa_rows,
        &rewards,
        derive_seed(cfg.seed, &[11]),
    )?;

    let xs_rows: Vec<Vec<f64>> = dh
        .records
        .iter()
        .map(|r| enc.xs(r.user_index, &r.short_rewards))
        .collect();
    let q_hat_xs = FittedRegressor::fit(
        &cfg.q_family,
        &xs_rows,
        &rewards,
        derive_seed(cfg.seed, &[12]),
    )?;

    let xas_rows: Vec<Vec<f64>> = dh
        .records
        .iter()
        .map(|r| enc.xas(r.user_index, r.action, &r.short_rewards))
        .collect();
    let h_hat = FittedRegressor::fit(
        &cfg.h_family,
        &xas_rows,
        &rewards,
        derive_seed(cfg.seed, &[13]),
    )?;

    let h_bar = match cfg.hbar_mode {
        HbarMode::AuxiliaryFit => {
            let targets: Vec<f64> = xas_rows.iter().map(|row| h_hat.predict(row)).collect();
            let m = FittedRegressor::fit(
                &cfg.h_family,
                &xa_rows,
                &targets,
                derive_seed(cfg.seed, &[14]),
            )?;
            HbarModel::Fitted(m)
        }
        HbarMode::EnvMonteCarlo { samples } => {
            let env = env.ok_or_else(|| {
                Error::InvalidConfig(
                    "hbar_mode = env_monte_carlo requires a synthetic environment".into(),
                )
            })?;
            if samples == 0 {
                return Err(Error::InvalidConfig(
                    "env_monte_carlo needs samples >= 1".into(),
                ));
            }
            let table = hbar_env_monte_carlo(env, enc, &h_hat, samples, cfg.seed)?;
            HbarModel::Table(table)
        }
    };

    Ok(RewardModelBundle {
        h_hat: Some(h_hat),
        h_bar: Some(h_bar),
        q_hat_xa: Some(q_hat_xa),
        q_hat_xs: Some(q_hat_xs),
    })
}

fn hbar_env_monte_carlo(
    env: &SyntheticEnv,
    enc: &Encoder<'_>,
    h_hat: &FittedRegressor,
    samples: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    use rand_distr::StandardNormal;

    let cfg = env.config();
    let mut rng = crate::seeding::rng_from(derive_seed(seed, &[15]));
    let mut table = Array2::zeros((cfg.n_users, cfg.n_actions));
    for u in 0..cfg.n_users {
        for a in 0..cfg.n_actions {
            let f = env.expected_short(u, a)?;
            let mut acc = 0.0;
            for _ in 0..samples {
                let s: Vec<f64> = f
                    .iter()
                    .map(|&fv| {
                        let z: f64 = rand::Rng::sample(&mut rng, StandardNormal);
                        fv + cfg.sigma_s * z
                    })
                    .collect();
                acc += h_hat.predict(&enc.xas(u, a, &s));
            }
            table[(u, a)] = acc / samples as f64;
        }
    }
    Ok(table)
}

/// The model behind `pi0(a | x, s)`: a fitted classifier, or the exact
/// conditional table of a tabular environment (indexed `(x, s, a)`, with the
/// surrogate decoded from its one-hot encoding).
#[derive(Debug, Clone, PartialEq)]
pub enum ActionPosterior {
    Fitted(SoftmaxClassifier),
    Exact(Array3<f64>),
}

/// Estimated surrogate importance weights via the Bayes-rule identity
/// `w(x,s) = E_{pi0(a|x,s)}[ pi1(a|x) / pi0(a|x) ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateWeightModel {
    pub posterior: ActionPosterior,
    /// Full logging-policy rows over the population (the per-action ratio
    /// needs all actions, not just the logged one).
    pub logging: TabularPolicy,
    /// The fixed target policy for value estimation.
    pub target: TabularPolicy,
    /// Optional density-ratio discriminator trained on short-term experiment
    /// vs historical `(x, s)` samples; when present it overrides the
    /// Bayes-mixture weight for value estimation.
    pub ratio_model: Option<DensityRatioModel>,
}

/// Two-class discriminator reinterpreted as a density-ratio estimate:
/// `pi1(s|x)/pi0(s|x) ~ (n0/n1) * p(short|x,s) / p(hist|x,s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRatioModel {
    pub classifier: SoftmaxClassifier,
    /// `n_hist / n_short` prior correction.
    pub prior_ratio: f64,
}

impl DensityRatioModel {
    pub fn ratio(&self, features: &[f64]) -> f64 {
        let p = self.classifier.predict_proba(features);
        self.prior_ratio * p[1] / p[0]
    }
}

impl SurrogateWeightModel {
    pub fn from_exact_posterior(
        table: Array3<f64>,
        logging: TabularPolicy,
        target: TabularPolicy,
    ) -> Self {
        Self {
            posterior: ActionPosterior::Exact(table),
            logging,
            target,
            ratio_model: None,
        }
    }

    /// `pi0hat(a | x, s)` for one record.
    pub fn posterior_probs(&self, enc: &Encoder<'_>, user: usize, s: &[f64]) -> Vec<f64> {
        match &self.posterior {
            ActionPosterior::Fitted(clf) => clf.predict_proba(&enc.xs(user, s)),
            ActionPosterior::Exact(table) => {
                let si = onehot_to_index(s);
                (0..table.dim().2).map(|a| table[(user, si, a)]).collect()
            }
        }
    }

    /// Vanilla importance weight `w(x,a)` of the stored target policy.
    pub fn vanilla_weight(&self, user: usize, action: usize) -> f64 {
        self.target.prob(user, action) / self.logging.prob(user, action)
    }

    /// Estimated surrogate weight for the stored target policy.
    pub fn weight(&self, enc: &Encoder<'_>, user: usize, s: &[f64]) -> f64 {
        if let Some(ratio) = &self.ratio_model {
            return ratio.ratio(&enc.xs(user, s));
        }
        self.weight_for_row(enc, user, s, self.target.row(user))
    }

    /// Bayes-mixture surrogate weight for an arbitrary target row (used by
    /// the policy-gradient learner, which reuses the fixed classifier at
    /// every parameter value).
    pub fn weight_for_row(
        &self,
        enc: &Encoder<'_>,
        user: usize,
        s: &[f64],
        target_row: &[f64],
    ) -> f64 {
        let post = self.posterior_probs(enc, user, s);
        let logging_row = self.logging.row(user);
        let mut w = 0.0;
        for (a, &p) in post.iter().enumerate() {
            w += p * target_row[a] / logging_row[a];
        }
        w
    }
}

/// Fits `pi0hat(a|x,s)` by softmax classification of logged actions on
/// `(x, s)` and assembles the Bayes-rule weight model.
///
/// When `cfg.use_short_experiment_for_weights` is set and short-term data is
/// supplied, a second classifier discriminating short-term from historical
/// `(x, s)` rows estimates the marginal density ratio `pi1(s|x)/pi0(s|x)`
/// nonparametrically; that estimate then backs [`SurrogateWeightModel::weight`].
pub fn estimate_surrogate_weights(
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    target: &TabularPolicy,
    logging: &TabularPolicy,
    ds: Option<&ShortTermDataset>,
    cfg: &NuisanceConfig,
) -> Result<SurrogateWeightModel> {
    if dh.is_empty() {
        return Err(Error::EmptyDataset(
            "estimate_surrogate_weights needs records",
        ));
    }
    let rows: Vec<Vec<f64>> = dh
        .records
        .iter()
        .map(|r| enc.xs(r.user_index, &r.short_rewards))
        .collect();
    let labels: Vec<usize> = dh.records.iter().map(|r| r.action).collect();
    let classifier = fit_softmax_classifier(&rows, &labels, logging.n_actions(), &cfg.classifier)?;
    let mut model = SurrogateWeightModel {
        posterior: ActionPosterior::Fitted(classifier),
        logging: logging.clone(),
        target: target.clone(),
        ratio_model: None,
    };

    if cfg.use_short_experiment_for_weights {
        if let Some(ds) = ds {
            if !ds.is_empty() && ds.dim_s() == dh.dim_s() {
                model.ratio_model = Some(fit_density_ratio(dh, enc, ds, cfg)?);
            }
        }
    }
    Ok(model)
}

fn fit_density_ratio(
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    ds: &ShortTermDataset,
    cfg: &NuisanceConfig,
) -> Result<DensityRatioModel> {
    let mut rows = Vec::with_capacity(dh.len() + ds.len());
    let mut labels = Vec::with_capacity(dh.len() + ds.len());
    for r in &dh.records {
        rows.push(enc.xs(r.user_index, &r.short_rewards));
        labels.push(0usize);
    }
    for r in &ds.records {
        rows.push(enc.xs(r.user_index, &r.short_rewards));
        labels.push(1usize);
    }
    let classifier = fit_softmax_classifier(&rows, &labels, 2, &cfg.classifier)?;
    Ok(DensityRatioModel {
        classifier,
        prior_ratio: dh.len() as f64 / ds.len() as f64,
    })
}

/// Empirical-average estimator on long-term experiment data (the infeasible
/// skyline).
pub fn avg_estimate(outcomes: &LongTermOutcomes) -> Result<EstimateReport> {
    if outcomes.is_empty() {
        return Err(Error::EmptyDataset("avg_estimate needs outcomes"));
    }
    let n = outcomes.len() as f64;
    let value = outcomes.rewards.iter().sum::<f64>() / n;
    Ok(EstimateReport::new("avg", value)?.with("n", n))
}

/// Long-term causal inference: mean of the long-term reward predictor over
/// the short-term experiment data.
pub fn lci_estimate(
    ds: &ShortTermDataset,
    enc: &Encoder<'_>,
    q_hat_xs: &FittedRegressor,
) -> Result<EstimateReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("lci_estimate needs short-term records"));
    }
    let expected_dim = enc.xs_dim(ds.dim_s());
    if let FittedRegressor::Ridge(m) = q_hat_xs {
        if m.weights.len() != expected_dim {
            return Err(Error::DimensionMismatch {
                context: "lci_estimate features",
                expected: expected_dim,
                actual: m.weights.len(),
            });
        }
    }
    let n = ds.len() as f64;
    let mut sum = 0.0;
    for rec in &ds.records {
        sum += q_hat_xs.predict(&enc.xs(rec.user_index, &rec.short_rewards));
    }
    Ok(EstimateReport::new("lci", sum / n)?.with("n", n))
}

/// Inverse propensity scoring on historical data.
pub fn ips_estimate(dh: &HistoricalDataset, target: &TabularPolicy) -> Result<EstimateReport> {
    ips_estimate_with(dh, target, None)
}

pub fn ips_estimate_with(
    dh: &HistoricalDataset,
    target: &TabularPolicy,
    max_weight: Option<f64>,
) -> Result<EstimateReport> {
    if dh.is_empty() {
        return Err(Error::EmptyDataset("ips_estimate needs records"));
    }
    dh.check_support()?;
    let n = dh.len() as f64;
    let mut sum = 0.0;
    let mut w_max = 0.0_f64;
    let mut w_sum = 0.0;
    let mut w2_sum = 0.0;
    for rec in &dh.records {
        let w = clip(
            target.prob(rec.user_index, rec.action) / rec.logging_propensity,
            max_weight,
        );
        w_max = w_max.max(w);
        w_sum += w;
        w2_sum += w * w;
        sum += ips_term(w, rec.long_reward);
    }
    let ess = if w2_sum > 0.0 {
        w_sum * w_sum / w2_sum
    } else {
        0.0
    };
    Ok(EstimateReport::new("ips", sum / n)?
        .with("n", n)
        .with("max_weight", w_max)
        .with("mean_weight", w_sum / n)
        .with("ess", ess))
}

/// Doubly robust estimator on historical data.
pub fn dr_estimate(
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    target: &TabularPolicy,
    q_hat_xa: &FittedRegressor,
) -> Result<EstimateReport> {
    dr_estimate_with(dh, enc, target, q_hat_xa, None)
}

pub fn dr_estimate_with(
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    target: &TabularPolicy,
    q_hat_xa: &FittedRegressor,
    max_weight: Option<f64>,
) -> Result<EstimateReport> {
    if dh.is_empty() {
        return Err(Error::EmptyDataset("dr_estimate needs records"));
    }
    dh.check_support()?;
    let n_actions = target.n_actions();

    // qhat(x, pi1) per user, over the whole population once.
    let mut q_pi1 = vec![0.0; enc.contexts().n_users()];
    for (u, q) in q_pi1.iter_mut().enumerate() {
        let row = target.row(u);
        *q = (0..n_actions)
            .map(|a| row[a] * q_hat_xa.predict(&enc.xa(u, a)))
            .sum();
    }

    let n = dh.len() as f64;
    let mut sum = 0.0;
    let mut w_max = 0.0_f64;
    let mut w_sum = 0.0;
    for rec in &dh.records {
        let w = clip(
            target.prob(rec.user_index, rec.action) / rec.logging_propensity,
            max_weight,
        );
        w_max = w_max.max(w);
        w_sum += w;
        let q_at = q_hat_xa.predict(&enc.xa(rec.user_index, rec.action));
        sum += dr_term(w, rec.long_reward, q_at, q_pi1[rec.user_index]);
    }
    Ok(EstimateReport::new("dr", sum / n)?
        .with("n", n)
        .with("max_weight", w_max)
        .with("mean_weight", w_sum / n))
}

/// The LOPE estimator: surrogate importance weighting for the surrogate
/// effect plus a reward-regression correction for the action effect.
pub fn lope_estimate(
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    target: &TabularPolicy,
    weights: &SurrogateWeightModel,
    bundle: &RewardModelBundle,
) -> Result<EstimateReport> {
    lope_estimate_with(dh, enc, target, weights, bundle, None)
}

pub fn lope_estimate_with(
    dh: &HistoricalDataset,
    enc: &Encoder<'_>,
    target: &TabularPolicy,
    weights: &SurrogateWeightModel,
    bundle: &RewardModelBundle,
    max_weight: Option<f64>,
) -> Result<EstimateReport> {
    if dh.is_empty() {
        return Err(Error::EmptyDataset("lope_estimate needs records"));
    }
    dh.check_support()?;
    let h_hat = bundle
        .h_hat
        .as_ref()
        .ok_or(Error::MissingComponent("bundle.h_hat"))?;
    let h_bar = bundle
        .h_bar
        .as_ref()
        .ok_or(Error::MissingComponent("bundle.h_bar"))?;
    let n_actions = target.n_actions();

    // hbar(x, pi1) per user.
    let mut hbar_pi1 = vec![0.0; enc.contexts().n_users()];
    for (u, hb) in hbar_pi1.iter_mut().enumerate() {
        let row = target.row(u);
        *hb = (0..n_actions)
            .map(|a| row[a] * h_bar.value(enc, u, a))
            .sum();
    }

    let n = dh.len() as f64;
    let mut sum = 0.0;
    let mut w_max = 0.0_f64;
    let mut w_sum = 0.0;
    for rec in &dh.records {
        let w = clip(weights.weight(enc, rec.user_index, &rec.short_rewards), max_weight);
        w_max = w_max.max(w);
        w_sum += w;
        let h = h_hat.predict(&enc.xas(rec.user_index, rec.action, &rec.short_rewards));
        sum += lope_term(w, rec.long_reward, h, hbar_pi1[rec.user_index]);
    }
    Ok(EstimateReport::new("lope", sum / n)?
        .with("n", n)
        .with("max_surrogate_weight", w_max)
        .with("mean_surrogate_weight", w_sum / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::tabular::{RewardLaw, TabularEnv};
    use crate::types::HistoricalRecord;
    use ndarray::Array2;

    fn toy_contexts(n_users: usize, dim_x: usize) -> ContextSet {
        let features = Array2::from_shape_fn((n_users, dim_x), |(i, j)| {
            ((i * dim_x + j) as f64 * 0.31).sin()
        });
        ContextSet::uniform(features).unwrap()
    }

    fn toy_dataset(n: usize, n_users: usize, n_actions: usize, dim_s: usize) -> HistoricalDataset {
        let records = (0..n)
            .map(|i| HistoricalRecord {
                user_index: i % n_users,
                action: (i * 7) % n_actions,
                logging_propensity: 0.2 + 0.6 * (((i * 13) % 10) as f64) / 10.0,
                short_rewards: (0..dim_s).map(|d| ((i + d) as f64 * 0.17).cos()).collect(),
                long_reward: ((i as f64) * 0.29).sin() * 2.0,
            })
            .collect();
        HistoricalDataset {
            records,
            provenance: "toy".into(),
        }
    }

    #[test]
    fn avg_basics() {
        let out = LongTermOutcomes {
            rewards: vec![1.0, 2.0, 3.0],
        };
        assert!((avg_estimate(&out).unwrap().value - 2.0).abs() < 1e-15);
        let single = LongTermOutcomes { rewards: vec![7.5] };
        assert!((avg_estimate(&single).unwrap().value - 7.5).abs() < 1e-15);
        assert!(avg_estimate(&LongTermOutcomes { rewards: vec![] }).is_err());
    }

    #[test]
    fn lci_constant_model_returns_constant() {
        let contexts = toy_contexts(5, 3);
        let enc = Encoder::new(&contexts, None, 4);
        let ds = ShortTermDataset {
            records: (0..10)
                .map(|i| crate::types::ShortTermRecord {
                    user_index: i % 5,
                    short_rewards: vec![i as f64, -(i as f64)],
                })
                .collect(),
        };
        let q = FittedRegressor::constant(5, 4.25);
        let rep = lci_estimate(&ds, &enc, &q).unwrap();
        assert!((rep.value - 4.25).abs() < 1e-12);
    }

    #[test]
    fn encoder_interaction_block_is_bilinear() {
        let contexts = toy_contexts(3, 2);
        let embeddings = Array2::from_shape_fn((4, 3), |(a, j)| (a * 3 + j) as f64);
        let enc = Encoder::new(&contexts, Some(&embeddings), 4);
        let row = enc.xa(1, 2);
        assert_eq!(row.len(), enc.xa_dim());
        let x: Vec<f64> = contexts.feature_row(1).to_vec();
        // Layout: x, onehot(a), then x_i * e_j in row-major (i, j).
        assert_eq!(&row[..2], &x[..]);
        assert_eq!(row[2 + 2], 1.0);
        for i in 0..2 {
            for j in 0..3 {
                let want = x[i] * embeddings[(2, j)];
                assert!((row[2 + 4 + i * 3 + j] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ips_unit_weights_match_on_policy_mean() {
        let n_actions = 4;
        let target = TabularPolicy::uniform(6, n_actions).unwrap();
        let mut dh = toy_dataset(50, 6, n_actions, 2);
        for rec in &mut dh.records {
            rec.logging_propensity = target.prob(rec.user_index, rec.action);
        }
        let rep = ips_estimate(&dh, &target).unwrap();
        let mean = crate::types::on_policy_value(&dh).unwrap();
        assert!((rep.value - mean).abs() < 1e-12);
    }

    #[test]
    fn ips_zero_rewards_zero_estimate() {
        let n_actions = 3;
        let target = TabularPolicy::uniform(4, n_actions).unwrap();
        let mut dh = toy_dataset(30, 4, n_actions, 1);
        for rec in &mut dh.records {
            rec.long_reward = 0.0;
        }
        assert_eq!(ips_estimate(&dh, &target).unwrap().value, 0.0);
    }

    #[test]
    fn ips_rejects_zero_propensity() {
        let target = TabularPolicy::uniform(4, 3).unwrap();
        let mut dh = toy_dataset(5, 4, 3, 1);
        dh.records[3].logging_propensity = 0.0;
        match ips_estimate(&dh, &target) {
            Err(Error::SupportViolation { record, .. }) => assert_eq!(record, 3),
            other => panic!("expected support violation, got {other:?}"),
        }
    }

    #[test]
    fn dr_with_zero_model_equals_ips() {
        let contexts = toy_contexts(6, 3);
        let n_actions = 4;
        let enc = Encoder::new(&contexts, None, n_actions);
        let target = env_greedyish_policy(6, n_actions);
        let dh = toy_dataset(40, 6, n_actions, 2);
        let zero = FittedRegressor::zero(enc.xa_dim());
        let dr = dr_estimate(&dh, &enc, &target, &zero).unwrap();
        let ips = ips_estimate(&dh, &target).unwrap();
        assert!((dr.value - ips.value).abs() < 1e-12);
    }

    fn env_greedyish_policy(n_users: usize, n_actions: usize) -> TabularPolicy {
        let rows = (0..n_users)
            .map(|u| {
                let mut row = vec![0.05 / (n_actions as f64 - 1.0); n_actions];
                row[u % n_actions] = 0.95;
                let s: f64 = row.iter().sum();
                row.iter().map(|v| v / s).collect()
            })
            .collect();
        TabularPolicy::from_rows(rows).unwrap()
    }

    #[test]
    fn lope_with_zero_h_reduces_to_weighted_ips() {
        let env = TabularEnv::random(21, 3, 4, 3, RewardLaw::TwoPoint);
        let pi0 = env.random_policy(1);
        let pi1 = env.random_policy(2);
        let dh = env.sample_historical(&pi0, 200, 5).unwrap();
        let contexts = env.contexts_onehot().unwrap();
        let enc = Encoder::new(&contexts, None, 4);
        let posterior = env.action_posterior_table(&pi0).unwrap();
        let weights = SurrogateWeightModel::from_exact_posterior(posterior, pi0, pi1.clone());
        let bundle = RewardModelBundle {
            h_hat: Some(FittedRegressor::zero(enc.xas_dim(3))),
            h_bar: Some(HbarModel::Table(Array2::zeros((3, 4)))),
            q_hat_xa: None,
            q_hat_xs: None,
        };
        let rep = lope_estimate(&dh, &enc, &pi1, &weights, &bundle).unwrap();
        let manual: f64 = dh
            .records
            .iter()
            .map(|rec| weights.weight(&enc, rec.user_index, &rec.short_rewards) * rec.long_reward)
            .sum::<f64>()
            / dh.len() as f64;
        assert!((rep.value - manual).abs() < 1e-12);
    }

    #[test]
    fn lope_missing_components_error() {
        let env = TabularEnv::random(22, 3, 4, 3, RewardLaw::Deterministic);
        let pi0 = env.random_policy(1);
        let pi1 = env.random_policy(2);
        let dh = env.sample_historical(&pi0, 10, 5).unwrap();
        let contexts = env.contexts_onehot().unwrap();
        let enc = Encoder::new(&contexts, None, 4);
        let posterior = env.action_posterior_table(&pi0).unwrap();
        let weights = SurrogateWeightModel::from_exact_posterior(posterior, pi0, pi1.clone());
        let bundle = RewardModelBundle::default();
        match lope_estimate(&dh, &enc, &pi1, &weights, &bundle) {
            Err(Error::MissingComponent(_)) => {}
            other => panic!("expected missing component, got {other:?}"),
        }
    }

    #[test]
    fn surrogate_weights_telescope_when_policies_match() {
        let env = TabularEnv::random(23, 3, 4, 3, RewardLaw::Deterministic);
        let pi0 = env.random_policy(3);
        let dh = env.sample_historical(&pi0, 400, 8).unwrap();
        let contexts = env.contexts_onehot().unwrap();
        let enc = Encoder::new(&contexts, None, 4);
        let cfg = NuisanceConfig::default();
        let model = estimate_surrogate_weights(&dh, &enc, &pi0, &pi0, None, &cfg).unwrap();
        // For pi1 = pi0 the Bayes mixture averages ones, so the estimated
        // weight is exactly 1 regardless of classifier quality.
        for rec in dh.records.iter().take(20) {
            let w = model.weight(&enc, rec.user_index, &rec.short_rewards);
            assert!((w - 1.0).abs() < 1e-9, "weight {w}");
        }
    }

    #[test]
    fn exact_posterior_weights_recover_bayes_identity() {
        for seed in 0..5 {
            let env = TabularEnv::random(seed, 3, 4, 3, RewardLaw::Deterministic);
            let pi0 = env.random_policy(seed + 10);
            let pi1 = env.random_policy(seed + 20);
            let contexts = env.contexts_onehot().unwrap();
            let enc = Encoder::new(&contexts, None, 4);
            let posterior = env.action_posterior_table(&pi0).unwrap();
            let model =
                SurrogateWeightModel::from_exact_posterior(posterior, pi0.clone(), pi1.clone());
            for x in 0..3 {
                for s in 0..3 {
                    let mut onehot = vec![0.0; 3];
                    onehot[s] = 1.0;
                    let got = model.weight(&enc, x, &onehot);
                    let want = env.surrogate_weight(&pi0, &pi1, x, s).unwrap();
                    assert!(
                        (got - want).abs() < 1e-12,
                        "seed {seed} (x={x}, s={s}): {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn action_independent_surrogates_give_unit_weights() {
        let mut env = TabularEnv::random(31, 3, 4, 3, RewardLaw::Deterministic);
        for x in 0..3 {
            for s in 0..3 {
                let v = env.p_s_given_xa[(x, 0, s)];
                for a in 1..4 {
                    env.p_s_given_xa[(x, a, s)] = v;
                }
            }
        }
        let pi0 = env.random_policy(1);
        let pi1 = env.random_policy(2);
        let contexts = env.contexts_onehot().unwrap();
        let enc = Encoder::new(&contexts, None, 4);
        let posterior = env.action_posterior_table(&pi0).unwrap();
        let model = SurrogateWeightModel::from_exact_posterior(posterior, pi0, pi1);
        for x in 0..3 {
            for s in 0..3 {
                let mut onehot = vec![0.0; 3];
                onehot[s] = 1.0;
                let w = model.weight(&enc, x, &onehot);
                assert!((w - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn density_ratio_recovers_marginal_shift() {
        // Two populations over one context differing only in the s-marginal:
        // the discriminator ratio must track pi1(s|x)/pi0(s|x).
        let env = TabularEnv::random(37, 2, 3, 3, RewardLaw::Deterministic);
        let pi0 = env.random_policy(5);
        let pi1 = env.random_policy(6);
        let contexts = env.contexts_onehot().unwrap();
        let enc = Encoder::new(&contexts, None, 3);
        let dh = env.sample_historical(&pi0, 4000, 11).unwrap();
        // Short-term data: reuse the tabular sampler under pi1, drop labels.
        let ds = ShortTermDataset {
            records: env
                .sample_historical(&pi1, 4000, 12)
                .unwrap()
                .records
                .into_iter()
                .map(|r| crate::types::ShortTermRecord {
                    user_index: r.user_index,
                    short_rewards: r.short_rewards,
                })
                .collect(),
        };
        let cfg = NuisanceConfig {
            classifier: SoftmaxConfig {
                epochs: 2000,
                ..Default::default()
            },
            use_short_experiment_for_weights: true,
            ..Default::default()
        };
        let model = estimate_surrogate_weights(&dh, &enc, &pi1, &pi0, Some(&ds), &cfg).unwrap();
        assert!(model.ratio_model.is_some());
        for x in 0..2 {
            for s in 0..3 {
                let mut onehot = vec![0.0; 3];
                onehot[s] = 1.0;
                let got = model.weight(&enc, x, &onehot);
                let want = env.surrogate_weight(&pi0, &pi1, x, s).unwrap();
                assert!(
                    (got - want).abs() < 0.25 * want.max(0.5),
                    "(x={x}, s={s}): got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn estimators_are_affine_equivariant_in_r() {
        let contexts = toy_contexts(5, 2);
        let n_actions = 3;
        let enc = Encoder::new(&contexts, None, n_actions);
        let target = TabularPolicy::uniform(5, n_actions).unwrap();
        let dh = toy_dataset(60, 5, n_actions, 2);
        let c = 2.75;
        let mut shifted = dh.clone();
        for rec in &mut shifted.records {
            rec.long_reward += c;
        }

        // AVG.
        let out = LongTermOutcomes {
            rewards: dh.records.iter().map(|r| r.long_reward).collect(),
        };
        let out_shift = LongTermOutcomes {
            rewards: shifted.records.iter().map(|r| r.long_reward).collect(),
        };
        let a0 = avg_estimate(&out).unwrap().value;
        let a1 = avg_estimate(&out_shift).unwrap().value;
        assert!((a1 - a0 - c).abs() < 1e-12);

        // IPS with pi1 = pi0 (stored propensities match the target).
        let mut on_policy = dh.clone();
        for rec in &mut on_policy.records {
            rec.logging_propensity = target.prob(rec.user_index, rec.action);
        }
        let mut on_policy_shift = on_policy.clone();
        for rec in &mut on_policy_shift.records {
            rec.long_reward += c;
        }
        let i0 = ips_estimate(&on_policy, &target).unwrap().value;
        let i1 = ips_estimate(&on_policy_shift, &target).unwrap().value;
        assert!((i1 - i0 - c).abs() < 1e-12);

        // DR with qhat shifted by the same constant.
        let q0 = FittedRegressor::constant(enc.xa_dim(), 0.5);
        let q1 = FittedRegressor::constant(enc.xa_dim(), 0.5 + c);
        let d0 = dr_estimate(&dh, &enc, &target, &q0).unwrap().value;
        let d1 = dr_estimate(&shifted, &enc, &target, &q1).unwrap().value;
        assert!((d1 - d0 - c).abs() < 1e-12);

        // LOPE with hhat (and its hbar) shifted by the same constant.
        let env = TabularEnv::random(41, 5, n_actions, 2, RewardLaw::Deterministic);
        let posterior = env.action_posterior_table(&TabularPolicy::uniform(5, n_actions).unwrap());
        let weights = SurrogateWeightModel::from_exact_posterior(
            posterior.unwrap(),
            TabularPolicy::uniform(5, n_actions).unwrap(),
            target.clone(),
        );
        let dim_xas = enc.xas_dim(2);
        let b0 = RewardModelBundle {
            h_hat: Some(FittedRegressor::constant(dim_xas, 0.25)),
            h_bar: Some(HbarModel::Table(Array2::from_elem((5, n_actions), 0.25))),
            q_hat_xa: None,
            q_hat_xs: None,
        };
        let b1 = RewardModelBundle {
            h_hat: Some(FittedRegressor::constant(dim_xas, 0.25 + c)),
            h_bar: Some(HbarModel::Table(Array2::from_elem(
                (5, n_actions),
                0.25 + c,
            ))),
            q_hat_xa: None,
            q_hat_xs: None,
        };
        let l0 = lope_estimate(&dh, &enc, &target, &weights, &b0).unwrap().value;
        let l1 = lope_estimate(&shifted, &enc, &target, &weights, &b1)
            .unwrap()
            .value;
        assert!((l1 - l0 - c).abs() < 1e-12);
    }
}
