//! k-means with k-means++ seeding and Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{gemm, squared_distance, squared_norm, Matrix};

pub const DEFAULT_MAX_ITERS: usize = 50;
/// Independent k-means++ initializations tried by [`kmeans_fit`].
pub const DEFAULT_RESTARTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    /// k×D centroid matrix.
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// Mean squared distance of each point to its assigned centroid.
    pub objective: f64,
    pub iterations_run: usize,
    /// Objective after the seeding assignment and after every Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    /// Nearest centroid for each row; ties go to the smaller index.
    pub fn assign(&self, points: &Matrix) -> Result<Vec<usize>> {
        if points.cols() != self.centroids.cols() {
            return Err(Error::shape(format!(
                "points have dimension {}, centroids {}",
                points.cols(),
                self.centroids.cols()
            )));
        }
        Ok(nearest_centroids(points, &self.centroids)?.0)
    }
}

/// Nearest centroid and exact squared distance per point.
///
/// Candidates come from the expanded `‖x‖² + ‖c‖² − 2x·c` form (one matrix
/// product); every centroid within rounding distance of the best is then
/// re-scored exactly so ties and near-ties resolve as a direct loop would.
fn nearest_centroids(points: &Matrix, centroids: &Matrix) -> Result<(Vec<usize>, Vec<f64>)> {
    let (n, k) = (points.rows(), centroids.rows());
    let cn: Vec<f64> = centroids.row_iter().map(squared_norm).collect();
    let cmax = cn.iter().copied().fold(0.0, f64::max);
    let mut labels = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    const BLOCK: usize = 512;
    let mut start = 0;
    while start < n {
        let rows = BLOCK.min(n - start);
        let block = points.select_rows(&(start..start + rows).collect::<Vec<_>>());
        let mut prod = Matrix::zeros(rows, k);
        gemm(-2.0, &block, false, centroids, true, 0.0, &mut prod)?;
        for r in 0..rows {
            let x = block.row(r);
            let xn = squared_norm(x);
            let approx: Vec<f64> = prod.row(r).iter().zip(&cn).map(|(p, c)| p + c).collect();
            let best = approx.iter().copied().fold(f64::INFINITY, f64::min);
            let tol = 1e-9 * (xn + cmax) + f64::MIN_POSITIVE;
            let mut pick = (usize::MAX, f64::INFINITY);
            for (j, &a) in approx.iter().enumerate() {
                if a <= best + tol {
                    let d = squared_distance(x, centroids.row(j));
                    if d < pick.1 {
                        pick = (j, d);
                    }
                }
            }
            labels.push(pick.0);
            dists.push(pick.1);
        }
        start += rows;
    }
    Ok((labels, dists))
}

fn kmeans_pp(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let mut centroids = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = points
        .row_iter()
        .map(|x| squared_distance(x, centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, x) in points.row_iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(x, centroids.row(c)));
        }
    }
    centroids
}

/// Moves each cluster's centroid to its members' mean. Clusters left empty take
/// the point currently farthest from its own centroid, which becomes their centroid.
fn update_centroids(points: &Matrix, k: usize, assignments: &mut [usize], centroids: &mut Matrix) {
    let dim = points.cols();
    let mut sums = Matrix::zeros(k, dim);
    let mut counts = vec![0usize; k];
    for (x, &a) in points.row_iter().zip(assignments.iter()) {
        counts[a] += 1;
        for (s, v) in sums.row_mut(a).iter_mut().zip(x) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut far = (usize::MAX, -1.0);
        for (i, x) in points.row_iter().enumerate() {
            if counts[assignments[i]] < 2 {
                continue;
            }
            let d = squared_distance(x, centroids.row(assignments[i]));
            if d > far.1 {
                far = (i, d);
            }
        }
        let i = far.0;
        log::debug!("k-means: cluster {c} empty, reseeded from point {i}");
        counts[assignments[i]] -= 1;
        assignments[i] = c;
        counts[c] = 1;
        centroids.row_mut(c).copy_from_slice(points.row(i));
    }
}

/// Fits `k` clusters to the rows of `points`, keeping the best of
/// [`DEFAULT_RESTARTS`] seeded k-means++ initializations.
pub fn kmeans_fit(points: &Matrix, k: usize, max_iters: usize, seed: u64) -> Result<KMeansModel> {
    kmeans_fit_restarts(points, k, max_iters, DEFAULT_RESTARTS, seed)
}

/// As [`kmeans_fit`] with an explicit number of initializations. Each run stops
/// when assignments stop changing or after `max_iters` Lloyd iterations; the
/// run with the lowest objective wins, earlier runs on ties.
pub fn kmeans_fit_restarts(
    points: &Matrix,
    k: usize,
    max_iters: usize,
    restarts: usize,
    seed: u64,
) -> Result<KMeansModel> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::config("k-means needs k ≥ 1"));
    }
    if k > n {
        return Err(Error::config(format!("k-means with k = {k} exceeds the {n} points")));
    }
    if restarts == 0 {
        return Err(Error::config("k-means needs at least one initialization"));
    }
    if !points.is_finite() {
        return Err(Error::numeric("k-means input contains non-finite values"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansModel> = None;
    for _ in 0..restarts {
        let run = lloyd(points, k, max_iters, &mut rng)?;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd(points: &Matrix, k: usize, max_iters: usize, rng: &mut ChaCha8Rng) -> Result<KMeansModel> {
    let n = points.rows();
    let mut centroids = kmeans_pp(points, k, rng);
    let (mut assignments, d2) = nearest_centroids(points, &centroids)?;
    let mut objective = d2.iter().sum::<f64>() / n as f64;
    let mut trace = vec![objective];
    let mut iterations_run = 0;
    for it in 1..=max_iters {
        update_centroids(points, k, &mut assignments, &mut centroids);
        let (next, d2) = nearest_centroids(points, &centroids)?;
        let next_objective = d2.iter().sum::<f64>() / n as f64;
        assert!(
            next_objective <= objective * (1.0 + 1e-12) + 1e-300,
            "Lloyd objective increased from {objective} to {next_objective}"
        );
        objective = next_objective;
        trace.push(objective);
        iterations_run = it;
        let converged = next == assignments;
        assignments = next;
        if converged {
            break;
        }
    }
    Ok(KMeansModel {
        centroids,
        assignments,
        objective,
        iterations_run,
        objective_trace: trace,
    })
}
