//! Principal-component projection and k-means clustering used to build the
//! cluster-valued confounder.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::rng;

/// Scores on the two leading principal components of `x`, each column
/// min-max scaled to [0, 1].
///
/// A component with (numerically) zero variance is returned as a column of
/// zeros; fewer than one informative component is an error.
pub fn pca_top2(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (n, d) = x.dim();
    if d < 2 || n <= 2 {
        return Err(Error::InvalidArgument(format!(
            "pca_top2 needs at least 2 columns and 3 rows, got {n}x{d}"
        )));
    }
    let mean = x.mean_axis(Axis(0)).expect("n > 0");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let (vals, vecs) = symmetric_eigen(cov.view());
    let top = vals[0];
    if !(top > 0.0) {
        return Err(Error::Numerical("data have no variance; no principal component".into()));
    }
    let mut scores = centered.dot(&vecs.slice(ndarray::s![.., ..2]));
    for (c, mut col) in scores.axis_iter_mut(Axis(1)).enumerate() {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if vals[c] <= top * 1e-12 || !(hi > lo) {
            col.fill(0.0);
        } else {
            col.mapv_inplace(|v| (v - lo) / (hi - lo));
            // pin the extremes against rounding
            for v in col.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster of each point, `1..=k`, numbered by increasing first
    /// coordinate of the centroid.
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    /// Within-cluster sum of squares.
    pub cost: f64,
    pub iterations: usize,
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(points: ArrayView2<'_, f64>, centroids: &Array2<f64>, labels: &mut [usize]) -> (bool, f64) {
    let mut changed = false;
    let mut cost = 0.0;
    for (i, p) in points.rows().into_iter().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for (c, q) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(p, q);
            if d < best.0 {
                best = (d, c);
            }
        }
        if labels[i] != best.1 {
            labels[i] = best.1;
            changed = true;
        }
        cost += best.0;
    }
    (changed, cost)
}

fn cost_of(points: ArrayView2<'_, f64>, centroids: &Array2<f64>, labels: &[usize]) -> f64 {
    points
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(p, &c)| sq_dist(p, centroids.row(c)))
        .sum()
}

/// Recomputes centroids; an empty cluster is moved to the point farthest
/// from its current centroid.
fn update(points: ArrayView2<'_, f64>, labels: &mut [usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    let mut counts = vec![0usize; k];
    for (p, &c) in points.rows().into_iter().zip(labels.iter()) {
        sums.row_mut(c).scaled_add(1.0, &p);
        counts[c] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            let row = sums.row(c).mapv(|v| v / counts[c] as f64);
            centroids.row_mut(c).assign(&row);
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            let far = (0..points.nrows())
                .filter(|&i| counts[labels[i]] > 1)
                .map(|i| (sq_dist(points.row(i), centroids.row(labels[i])), i))
                .fold((f64::NEG_INFINITY, usize::MAX), |m, v| if v.0 > m.0 { v } else { m });
            if far.1 == usize::MAX {
                continue;
            }
            counts[labels[far.1]] -= 1;
            labels[far.1] = c;
            counts[c] = 1;
            centroids.row_mut(c).assign(&points.row(far.1));
        }
    }
}

/// Lloyd iterations from the given centroids. Returns labels (0-based),
/// final centroids, the cost after each iteration and the iteration count.
pub fn lloyd(
    points: ArrayView2<'_, f64>,
    mut centroids: Array2<f64>,
    max_iter: usize,
) -> (Vec<usize>, Array2<f64>, Vec<f64>, usize) {
    let mut labels = vec![usize::MAX; points.nrows()];
    let mut history = Vec::new();
    let mut iterations = 0;
    let (_, c0) = assign(points, &centroids, &mut labels);
    history.push(c0);
    for it in 0..max_iter {
        iterations = it + 1;
        update(points, &mut labels, &mut centroids);
        let (changed, c) = assign(points, &centroids, &mut labels);
        history.push(c);
        if !changed {
            break;
        }
    }
    (labels, centroids, history, iterations)
}

fn plus_plus_init<R: Rng>(points: ArrayView2<'_, f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, points.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(pick)));
        }
    }
    centroids
}

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITER: usize = 300;

/// k-means: k-means++ seeding, Lloyd to a fixed point (or 300 iterations),
/// best of 10 restarts by within-cluster sum of squares.
pub fn kmeans(points: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!("kmeans needs 1 <= k <= N, got k = {k}, N = {n}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("kmeans input contains non-finite values".into()));
    }
    let mut best: Option<(f64, Vec<usize>, Array2<f64>, usize)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut r = rng::substream(seed, "kmeans-restart", restart as u64);
        let init = plus_plus_init(points, k, &mut r);
        let (labels, centroids, _, iters) = lloyd(points, init, KMEANS_MAX_ITER);
        let cost = cost_of(points, &centroids, &labels);
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, labels, centroids, iters));
        }
    }
    let (cost, labels, centroids, iterations) = best.expect("at least one restart");
    // canonical numbering: by first centroid coordinate, ties by the rest
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (centroids.row(a), centroids.row(b));
        ra.iter()
            .zip(rb.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    let sorted = Array2::from_shape_fn(centroids.dim(), |(r, j)| centroids[[order[r], j]]);
    Ok(KMeansResult {
        labels: labels.iter().map(|&c| rank[c] + 1).collect(),
        centroids: sorted,
        cost,
        iterations,
    })
}

/// Cluster sizes indexed by label - 1.
pub fn cluster_sizes(labels: &[usize], k: usize) -> Array1<usize> {
    let mut out = Array1::zeros(k);
    for &l in labels {
        out[l - 1] += 1;
    }
    out
}
