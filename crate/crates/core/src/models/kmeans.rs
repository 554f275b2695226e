//! Lloyd's k-means with a fixed iteration budget.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::seeding::rng_from;

/// Iterations are fixed rather than convergence-tested so clustering is a
/// pure function of (points, k, seed).
pub const KMEANS_ITERATIONS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutcome {
    /// `k x dim` centroid matrix.
    pub centroids: Array2<f64>,
    /// Nearest-centroid index per input row.
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment pass.
    pub objective_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Runs `KMEANS_ITERATIONS` Lloyd iterations from a k-points-sampled start.
///
/// An empty cluster is re-seeded from the point farthest from its assigned
/// centroid.
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64) -> Result<KMeansOutcome> {
    let n = points.nrows();
    let dim = points.ncols();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!(
            "k must be in [1, {n}], got {k}"
        )));
    }

    // Initialize from k distinct data points.
    let mut rng = rng_from(seed);
    let init = rand::seq::index::sample(&mut rng, n, k).into_vec();
    let mut centroids = Array2::zeros((k, dim));
    for (c, &i) in init.iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(i));
    }

    let mut assignments = vec![0usize; n];
    let mut objective_trace = Vec::with_capacity(KMEANS_ITERATIONS + 1);
    for iter in 0..=KMEANS_ITERATIONS {
        // Assignment pass.
        let mut objective = 0.0;
        for i in 0..n {
            let p = points.row(i);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(p.as_slice().unwrap(), centroids.row(c).as_slice().unwrap());
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignments[i] = best;
            objective += best_d;
        }
        objective_trace.push(objective);
        if iter == KMEANS_ITERATIONS {
            break;
        }

        // Update pass.
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += &points.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = centroids.row_mut(c);
                row.assign(&sums.row(c));
                row /= counts[c] as f64;
            } else {
                // Re-seed from the point farthest from its assigned centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(
                            points.row(a).as_slice().unwrap(),
                            centroids.row(assignments[a]).as_slice().unwrap(),
                        );
                        let db = sq_dist(
                            points.row(b).as_slice().unwrap(),
                            centroids.row(assignments[b]).as_slice().unwrap(),
                        );
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids.row_mut(c).assign(&points.row(far));
            }
        }
    }

    Ok(KMeansOutcome {
        centroids,
        assignments,
        objective_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn k1_centroid_is_the_mean() {
        let points =
            Array2::from_shape_vec((4, 2), vec![0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 2.0, 2.0]).unwrap();
        let out = kmeans(&points, 1, 0).unwrap();
        assert!((out.centroids[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((out.centroids[(0, 1)] - 1.0).abs() < 1e-12);
        assert!(out.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn two_blobs_are_recovered() {
        let mut rng = crate::seeding::rng_from(1);
        let mut data = Vec::new();
        for _ in 0..30 {
            data.push(5.0 + rng.random_range(-0.5..0.5));
            data.push(5.0 + rng.random_range(-0.5..0.5));
        }
        for _ in 0..30 {
            data.push(-5.0 + rng.random_range(-0.5..0.5));
            data.push(-5.0 + rng.random_range(-0.5..0.5));
        }
        let points = Array2::from_shape_vec((60, 2), data).unwrap();
        let out = kmeans(&points, 2, 7).unwrap();
        let first = out.assignments[0];
        assert!(out.assignments[..30].iter().all(|&a| a == first));
        assert!(out.assignments[30..].iter().all(|&a| a != first));
    }

    #[test]
    fn objective_is_non_increasing() {
        let mut rng = crate::seeding::rng_from(3);
        let data: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let points = Array2::from_shape_vec((100, 3), data).unwrap();
        let out = kmeans(&points, 5, 11).unwrap();
        for pair in out.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "objective increased: {pair:?}");
        }
    }

    #[test]
    fn assignments_are_nearest_centroid() {
        let mut rng = crate::seeding::rng_from(9);
        let data: Vec<f64> = (0..200).map(|_| rng.random_range(-2.0..2.0)).collect();
        let points = Array2::from_shape_vec((50, 4), data).unwrap();
        let out = kmeans(&points, 4, 13).unwrap();
        for i in 0..50 {
            let assigned = out.assignments[i];
            let da = sq_dist(
                points.row(i).as_slice().unwrap(),
                out.centroids.row(assigned).as_slice().unwrap(),
            );
            for c in 0..4 {
                let dc = sq_dist(
                    points.row(i).as_slice().unwrap(),
                    out.centroids.row(c).as_slice().unwrap(),
                );
                assert!(da <= dc + 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let points = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 3 + j) as f64 * 0.7).cos());
        let a = kmeans(&points, 3, 21).unwrap();
        let b = kmeans(&points, 3, 21).unwrap();
        assert_eq!(a, b);
    }
}
