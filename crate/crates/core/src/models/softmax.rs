//! Multinomial logistic regression trained by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::check_rows;
use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_l2")]
    pub l2: f64,
}

fn default_lr() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    500
}
fn default_l2() -> f64 {
    1e-4
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            epochs: default_epochs(),
            l2: default_l2(),
        }
    }
}

/// Fitted multinomial logistic model `p(class | x) = softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxClassifier {
    /// `n_classes x dim_in`, row-major per class.
    pub weight_matrix: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub l2: f64,
}

impl SoftmaxClassifier {
    pub fn n_classes(&self) -> usize {
        self.intercepts.len()
    }

    pub fn dim_in(&self) -> usize {
        self.weight_matrix.first().map(|r| r.len()).unwrap_or(0)
    }

    /// Class probabilities, floored at 1e-9 and renormalized.
    pub fn predict_proba(&self, features: &[f64]) -> Vec<f64> {
        let mut probs = self.softmax_raw(features);
        let mut floor_renorm = 0.0;
        for v in &mut probs {
            *v = v.max(PROB_FLOOR);
            floor_renorm += *v;
        }
        for v in &mut probs {
            *v /= floor_renorm;
        }
        probs
    }

    fn softmax_raw(&self, features: &[f64]) -> Vec<f64> {
        let mut logits = self.logits(features);
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

    fn logits(&self, features: &[f64]) -> Vec<f64> {
        debug_assert_eq!(features.len(), self.dim_in());
        self.weight_matrix
            .iter()
            .zip(&self.intercepts)
            .map(|(row, &b)| b + row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

/// Trains the classifier on L2-regularized cross-entropy.
///
/// `labels[i]` is the class index of row `i`; `n_classes` fixes the output
/// dimension (classes absent from the data keep near-uniform probabilities
/// under the regularization pull).
pub fn fit_softmax_classifier(
    x: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    cfg: &SoftmaxConfig,
) -> Result<SoftmaxClassifier> {
    let dim = check_rows(x, labels.len(), "fit_softmax_classifier")?;
    if n_classes < 2 {
        return Err(Error::InvalidConfig("need at least 2 classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= n_classes) {
        return Err(Error::IndexOutOfRange {
            context: "softmax labels",
            index: bad,
            len: n_classes,
        });
    }
    let n = x.len() as f64;
    let mut model = SoftmaxClassifier {
        weight_matrix: vec![vec![0.0; dim]; n_classes],
        intercepts: vec![0.0; n_classes],
        l2: cfg.l2,
    };

    let mut grad_w = vec![vec![0.0; dim]; n_classes];
    let mut grad_b = vec![0.0; n_classes];
    for _ in 0..cfg.epochs {
        for row in &mut grad_w {
            row.fill(0.0);
        }
        grad_b.fill(0.0);
        for (row, &label) in x.iter().zip(labels) {
            let probs = model.softmax_raw(row);
            for c in 0..n_classes {
                let delta = probs[c] - if c == label { 1.0 } else { 0.0 };
                grad_b[c] += delta;
                let gw = &mut grad_w[c];
                for (g, &xv) in gw.iter_mut().zip(row) {
                    *g += delta * xv;
                }
            }
        }
        for c in 0..n_classes {
            for (w, g) in model.weight_matrix[c].iter_mut().zip(&grad_w[c]) {
                *w -= cfg.learning_rate * (g / n + cfg.l2 * *w);
            }
            model.intercepts[c] -= cfg.learning_rate * grad_b[c] / n;
        }
    }
    if model
        .weight_matrix
        .iter()
        .flatten()
        .chain(&model.intercepts)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Numeric("softmax training diverged".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probabilities_sum_to_one() {
        let x = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let labels = vec![0, 1, 2];
        let m = fit_softmax_classifier(&x, &labels, 3, &SoftmaxConfig::default()).unwrap();
        for row in &x {
            let p = m.predict_proba(row);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 1e-10));
        }
    }

    #[test]
    fn single_class_dominates() {
        let x = vec![vec![1.0], vec![0.5], vec![-0.5]];
        let labels = vec![1, 1, 1];
        let m = fit_softmax_classifier(&x, &labels, 2, &SoftmaxConfig::default()).unwrap();
        let p = m.predict_proba(&[0.25]);
        assert!(p[1] > 0.9, "class 1 prob {}", p[1]);
    }

    #[test]
    fn linearly_separable_reaches_full_accuracy() {
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let t = i as f64 / 10.0;
            x.push(vec![1.0 + t, 1.0 - t]);
            labels.push(0);
            x.push(vec![-1.0 - t, -1.0 + t]);
            labels.push(1);
        }
        let m = fit_softmax_classifier(&x, &labels, 2, &SoftmaxConfig::default()).unwrap();
        let correct = x
            .iter()
            .zip(&labels)
            .filter(|(row, &lab)| {
                let p = m.predict_proba(row);
                let pred = if p[0] > p[1] { 0 } else { 1 };
                pred == lab
            })
            .count();
        assert_eq!(correct, x.len());
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let x = vec![vec![0.0]];
        assert!(fit_softmax_classifier(&x, &[5], 2, &SoftmaxConfig::default()).is_err());
    }

    #[test]
    fn rejects_empty_data() {
        let x: Vec<Vec<f64>> = vec![];
        assert!(fit_softmax_classifier(&x, &[], 2, &SoftmaxConfig::default()).is_err());
    }
}
