//! Ridge regression solved exactly by normal equations.

use serde::{Deserialize, Serialize};

use super::check_rows;
use crate::error::{Error, Result};

/// Linear model `y = w . x + b` with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2: f64,
}

impl RidgeModel {
    pub fn predict(&self, features: &[f64]) -> f64 {
        debug_assert_eq!(features.len(), self.weights.len());
        self.intercept
            + self
                .weights
                .iter()
                .zip(features)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }

    /// A model that predicts `c` everywhere.
    pub fn constant(dim_in: usize, c: f64) -> Self {
        Self {
            weights: vec![0.0; dim_in],
            intercept: c,
            l2: 0.0,
        }
    }
}

/// Exact minimizer of `||y - Xw - b||^2 + l2 ||w||^2`.
///
/// X and y are centered so the intercept is unpenalized; the centered system
/// is solved by Cholesky. A singular system with `l2 = 0` is reported as an
/// error advising a positive penalty.
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], l2: f64) -> Result<RidgeModel> {
    let dim = check_rows(x, y.len(), "fit_ridge")?;
    if l2 < 0.0 || !l2.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "l2 must be finite and >= 0, got {l2}"
        )));
    }
    let n = x.len() as f64;

    let mut x_mean = vec![0.0; dim];
    for row in x {
        for (m, v) in x_mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut x_mean {
        *m /= n;
    }
    let y_mean = y.iter().sum::<f64>() / n;

    // Gram matrix and moment vector of the centered data.
    let mut gram = vec![vec![0.0; dim]; dim];
    let mut moment = vec![0.0; dim];
    for (row, &yi) in x.iter().zip(y) {
        let yc = yi - y_mean;
        for i in 0..dim {
            let xi = row[i] - x_mean[i];
            moment[i] += xi * yc;
            for j in i..dim {
                gram[i][j] += xi * (row[j] - x_mean[j]);
            }
        }
    }
    for i in 0..dim {
        gram[i][i] += l2;
        for j in 0..i {
            gram[i][j] = gram[j][i];
        }
    }

    let weights = cholesky_solve(&gram, &moment)?;
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric("ridge solution is non-finite".into()));
    }
    let intercept = y_mean
        - weights
            .iter()
            .zip(&x_mean)
            .map(|(w, m)| w * m)
            .sum::<f64>();
    Ok(RidgeModel {
        weights,
        intercept,
        l2,
    })
}

/// Solves `A x = b` for symmetric positive-definite `A`.
fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = a
        .iter()
        .enumerate()
        .map(|(i, row)| row[i].abs())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= scale * 1e-13 {
                    return Err(Error::SingularSystem);
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    // Forward then backward substitution.
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i][k] * z[k];
        }
        z[i] = sum / l[i][i];
    }
    let mut sol = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = z[i];
        for k in i + 1..n {
            sum -= l[k][i] * sol[k];
        }
        sol[i] = sum / l[i][i];
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;
    use rand::Rng;

    /// Gradient of the ridge objective at (w, b); the oracle for optimality.
    fn objective_gradient(x: &[Vec<f64>], y: &[f64], m: &RidgeModel) -> (Vec<f64>, f64) {
        let dim = m.weights.len();
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (row, &yi) in x.iter().zip(y) {
            let resid = yi - m.predict(row);
            gb -= 2.0 * resid;
            for (g, &xv) in gw.iter_mut().zip(row) {
                *g -= 2.0 * resid * xv;
            }
        }
        for (g, &w) in gw.iter_mut().zip(&m.weights) {
            *g += 2.0 * m.l2 * w;
        }
        (gw, gb)
    }

    #[test]
    fn constant_target_yields_intercept() {
        let x = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.0]];
        let y = vec![4.5; 3];
        let m = fit_ridge(&x, &y, 0.0).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-9));
        assert!((m.intercept - 4.5).abs() < 1e-9);
    }

    #[test]
    fn exact_interpolation_two_points() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![0.0, 1.0];
        let m = fit_ridge(&x, &y, 0.0).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let mut rng = rng_from(42);
        let n = 50;
        let dim = 4;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|row| row[0] - 2.0 * row[2] + 0.3 + rng.random_range(-0.1..0.1))
            .collect();
        let m = fit_ridge(&x, &y, 0.1).unwrap();
        let (gw, gb) = objective_gradient(&x, &y, &m);
        let norm = gw.iter().map(|g| g * g).sum::<f64>().sqrt() + gb.abs();
        assert!(norm <= 1e-8, "gradient norm {norm}");
    }

    #[test]
    fn normal_equation_residual_is_tiny() {
        let mut rng = rng_from(7);
        let n = 80;
        let dim = 6;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<f64> = x.iter().map(|r| r.iter().sum::<f64>() * 0.5 + 1.0).collect();
        let l2 = 0.5;
        let m = fit_ridge(&x, &y, l2).unwrap();
        // Residual of (Xc'Xc + l2 I) w = Xc'(y - ybar) relative to ||X'y||.
        let xbar: Vec<f64> = (0..dim)
            .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let ybar = y.iter().sum::<f64>() / n as f64;
        let mut resid = vec![0.0; dim];
        for i in 0..dim {
            let mut lhs = l2 * m.weights[i];
            let mut rhs = 0.0;
            for (row, &yi) in x.iter().zip(&y) {
                let xc_i = row[i] - xbar[i];
                let mut xw = 0.0;
                for j in 0..dim {
                    xw += (row[j] - xbar[j]) * m.weights[j];
                }
                lhs += xc_i * xw;
                rhs += xc_i * (yi - ybar);
            }
            resid[i] = lhs - rhs;
        }
        let xty: f64 = (0..dim)
            .map(|j| x.iter().zip(&y).map(|(r, &yi)| r[j] * yi).sum::<f64>().powi(2))
            .sum::<f64>()
            .sqrt();
        let rn = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rn <= 1e-8 * (1.0 + xty), "residual {rn}");
    }

    #[test]
    fn collinear_without_penalty_is_singular() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        let y = vec![1.0, 2.0, 3.0];
        match fit_ridge(&x, &y, 0.0) {
            Err(Error::SingularSystem) => {}
            other => panic!("expected singular system, got {other:?}"),
        }
        // The same system solves fine with a positive penalty.
        assert!(fit_ridge(&x, &y, 1e-6).is_ok());
    }
}
