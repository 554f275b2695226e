//! Scratch: LOPE bias with exact surrogate weights (closed-form Gaussian
//! mixture marginals) vs classifier-estimated weights.

use lope_core::envs::{build_synthetic_env, SyntheticEnvConfig};
use lope_core::estimators::*;
use lope_core::models::SoftmaxConfig;
use lope_core::types::TabularPolicy;

fn log_normal(s: &[f64], mean: &[f64], sigma: f64) -> f64 {
    let mut acc = 0.0;
    for (v, m) in s.iter().zip(mean) {
        acc += (v - m) * (v - m);
    }
    -acc / (2.0 * sigma * sigma)
}

/// True w(x,s) = pi1(s|x)/pi0(s|x): both marginals are mixtures of
/// N(f(x,a), sigma_s^2 I) with policy weights.
fn true_weight(
    env: &lope_core::envs::SyntheticEnv,
    pi0: &TabularPolicy,
    pi1: &TabularPolicy,
    user: usize,
    s: &[f64],
) -> f64 {
    let cfg = env.config();
    let mut log_liks = Vec::with_capacity(cfg.n_actions);
    for a in 0..cfg.n_actions {
        let f = env.expected_short(user, a).unwrap();
        log_liks.push(log_normal(s, &f, cfg.sigma_s));
    }
    let max = log_liks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for a in 0..cfg.n_actions {
        let lik = (log_liks[a] - max).exp();
        num += pi1.prob(user, a) * lik;
        den += pi0.prob(user, a) * lik;
    }
    num / den
}

fn main() {
    let n = 500;
    let mut cfg = SyntheticEnvConfig::default();
    cfg.seed = 11;
    let env = build_synthetic_env(&cfg).unwrap();
    let pi0 = env.make_logging_policy(cfg.beta).unwrap();
    let pi1 = env.make_target_policy(cfg.epsilon).unwrap();
    let truth = env.exact_value(&pi1).unwrap();
    println!("V(pi1) = {truth:.4}");

    let nuisance = NuisanceConfig {
        classifier: SoftmaxConfig::default(),
        seed: 3,
        ..Default::default()
    };
    let enc = Encoder::new(
        env.contexts(),
        Some(env.actions().embeddings()),
        cfg.n_actions,
    );

    for rep in 0..4u64 {
        let dh = env.sample_historical(&pi0, n, 100 + rep).unwrap();
        let bundle =
            fit_reward_models(&dh, &enc, &nuisance, Some(&env)).unwrap();
        let h_hat = bundle.h_hat.as_ref().unwrap();
        let h_bar = bundle.h_bar.as_ref().unwrap();

        let weights =
            estimate_surrogate_weights(&dh, &enc, &pi1, &pi0, None, &nuisance).unwrap();

        // LOPE with estimated vs exact weights, same reward models.
        let mut est_first = 0.0;
        let mut exact_first = 0.0;
        let mut second = 0.0;
        let mut mean_west = 0.0;
        let mut mean_wtrue = 0.0;
        for r in &dh.records {
            let w_est = weights.weight(&enc, r.user_index, &r.short_rewards);
            let w_true = true_weight(&env, &pi0, &pi1, r.user_index, &r.short_rewards);
            mean_west += w_est / n as f64;
            mean_wtrue += w_true / n as f64;
            let h = h_hat.predict(&enc.xas(r.user_index, r.action, &r.short_rewards));
            est_first += w_est * (r.long_reward - h) / n as f64;
            exact_first += w_true * (r.long_reward - h) / n as f64;
            let hb: f64 = (0..cfg.n_actions)
                .map(|a| pi1.prob(r.user_index, a) * h_bar.value(&enc, r.user_index, a))
                .sum();
            second += hb / n as f64;
        }
        println!(
            "rep {rep}: second {second:.4} | est: first {est_first:.4} err {:+.4} (mean w {mean_west:.3}) | exact-w: first {exact_first:.4} err {:+.4} (mean w {mean_wtrue:.3})",
            est_first + second - truth,
            exact_first + second - truth,
        );
    }
}
