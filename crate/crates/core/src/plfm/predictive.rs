//! Reconstruction, marginal likelihoods and posterior-predictive simulation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;

use super::{check_inputs, Draw, PosteriorDraws};
use crate::data::{MaskedMatrix, MaskedRow};
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_in_place, log_det_from_cholesky, solve_lower_in_place,
    solve_lower_transpose_in_place, spd_inverse,
};
use crate::rng;
use crate::scalar::Real;

/// `E[X | z, f]` averaged over the draws: `mean_s (W_s z + A_s f)`.
pub fn reconstruct_mean<T: Real>(
    draws: &PosteriorDraws<T>,
    z: ArrayView1<'_, T>,
    f: ArrayView1<'_, T>,
) -> Result<Array1<T>> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no posterior draws".into()));
    }
    if z.len() != draws.latent_dim() || f.len() != draws.n_covariates() {
        return Err(Error::Shape("z or f does not match the model".into()));
    }
    let mut acc = Array1::zeros(draws.n_causes());
    for d in &draws.draws {
        acc += &d.mean(z, f);
    }
    let s = T::of_usize(draws.len());
    acc.mapv_inplace(|v| v / s);
    Ok(acc)
}

/// Cholesky factor and mean of one draw's marginal distribution of a subset
/// of coordinates of `x_i`, with `z_i` integrated out under its prior:
/// `N(W_S μ + A_S f_i, W_S Σ W_Sᵀ + σ² I)`.
#[derive(Debug, Clone)]
pub struct MarginalFactor<T> {
    pub coords: Vec<usize>,
    pub mean: Vec<T>,
    /// Row-major lower Cholesky factor.
    pub chol: Vec<T>,
    pub log_det: T,
}

impl<T: Real> MarginalFactor<T> {
    /// `log N(values | mean, LLᵀ)`, where `values[k]` belongs to `coords[k]`.
    pub fn log_density(&self, values: &[T], buf: &mut Vec<T>) -> T {
        let n = self.coords.len();
        if n == 0 {
            return T::zero();
        }
        buf.clear();
        buf.extend(values.iter().zip(&self.mean).map(|(&x, &m)| x - m));
        solve_lower_in_place(&self.chol, n, buf);
        let quad: T = buf.iter().map(|&v| v * v).sum();
        let ln2pi = T::lit((2.0 * std::f64::consts::PI).ln());
        -T::lit(0.5) * (T::of_usize(n) * ln2pi + self.log_det + quad)
    }
}

pub fn marginal_row_factor<T: Real>(
    draw: &Draw<T>,
    coords: &[usize],
    f_row: ArrayView1<'_, T>,
) -> Result<MarginalFactor<T>> {
    let n = coords.len();
    let k = draw.latent_dim();
    let mut mean = Vec::with_capacity(n);
    for &j in coords {
        let mut m = T::zero();
        for r in 0..k {
            m += draw.w[[j, r]] * draw.z_mean[r];
        }
        for c in 0..draw.n_covariates() {
            m += draw.a[[j, c]] * f_row[c];
        }
        mean.push(m);
    }
    // W_S Σ
    let mut ws = vec![T::zero(); n * k];
    for (a, &j) in coords.iter().enumerate() {
        for c in 0..k {
            let mut s = T::zero();
            for r in 0..k {
                s += draw.w[[j, r]] * draw.z_cov[[r, c]];
            }
            ws[a * k + c] = s;
        }
    }
    let mut cov = vec![T::zero(); n * n];
    for a in 0..n {
        for b in 0..=a {
            let mut s = T::zero();
            for c in 0..k {
                s += ws[a * k + c] * draw.w[[coords[b], c]];
            }
            cov[a * n + b] = s;
            cov[b * n + a] = s;
        }
        cov[a * n + a] += draw.sigma2;
    }
    if !cholesky_in_place(&mut cov, n) {
        return Err(Error::Numerical(
            "marginal covariance is not positive definite".into(),
        ));
    }
    Ok(MarginalFactor {
        coords: coords.to_vec(),
        mean,
        log_det: log_det_from_cholesky(&cov, n),
        chol: cov,
    })
}

/// `log p(x_i^obs | θ)` for one draw θ, with `z_i` integrated out under its
/// prior. Rows without observed entries give 0.
pub fn row_log_likelihood<T: Real>(
    draw: &Draw<T>,
    x_row: MaskedRow<'_, T>,
    f_row: ArrayView1<'_, T>,
) -> Result<T> {
    let coords = x_row.observed_indices();
    if coords.is_empty() {
        return Ok(T::zero());
    }
    let factor = marginal_row_factor(draw, &coords, f_row)?;
    let values: Vec<T> = coords.iter().map(|&j| x_row.values[j]).collect();
    Ok(factor.log_density(&values, &mut Vec::new()))
}

/// Per-draw quantities reused by every row: `Σ⁻¹` and `Σ⁻¹ μ`.
pub(crate) struct PriorCache<T> {
    pub prec: Array2<T>,
    pub prec_mean: Array1<T>,
}

impl<T: Real> PriorCache<T> {
    pub fn new(draw: &Draw<T>) -> Result<Self> {
        let prec = spd_inverse(draw.z_cov.view())?;
        let prec_mean = prec.dot(&draw.z_mean);
        Ok(PriorCache { prec, prec_mean })
    }
}

/// Draws `z_i ~ p(z_i | x_i^obs, f_i, θ)`.
pub fn sample_z_conditional<T: Real, R: Rng + ?Sized>(
    draw: &Draw<T>,
    x_row: MaskedRow<'_, T>,
    f_row: ArrayView1<'_, T>,
    rng: &mut R,
) -> Result<Array1<T>> {
    let cache = PriorCache::new(draw)?;
    sample_z_cached(draw, &cache, x_row, f_row, rng)
}

pub(crate) fn sample_z_cached<T: Real, R: Rng + ?Sized>(
    draw: &Draw<T>,
    cache: &PriorCache<T>,
    x_row: MaskedRow<'_, T>,
    f_row: ArrayView1<'_, T>,
    rng: &mut R,
) -> Result<Array1<T>> {
    let k = draw.latent_dim();
    let inv_s2 = T::one() / draw.sigma2;
    let mut prec: Vec<T> = cache.prec.iter().copied().collect();
    let mut lin: Vec<T> = cache.prec_mean.to_vec();
    for j in 0..draw.n_causes() {
        if !x_row.observed[j] {
            continue;
        }
        let mut t = x_row.values[j];
        for c in 0..draw.n_covariates() {
            t -= draw.a[[j, c]] * f_row[c];
        }
        for r in 0..k {
            let wr = draw.w[[j, r]] * inv_s2;
            lin[r] += wr * t;
            for c in 0..k {
                prec[r * k + c] += wr * draw.w[[j, c]];
            }
        }
    }
    if !cholesky_in_place(&mut prec, k) {
        return Err(Error::Numerical("z conditional precision is not positive definite".into()));
    }
    solve_lower_in_place(&prec, k, &mut lin);
    for v in lin.iter_mut() {
        *v += rng::std_normal::<T, _>(rng);
    }
    solve_lower_transpose_in_place(&prec, k, &mut lin);
    Ok(Array1::from(lin))
}

/// Index of the draw used by replicate `m` of `n_replicates`: evenly spaced
/// over the chain when there are at least as many draws as replicates,
/// cycling otherwise.
pub(crate) fn replicate_draw(m: usize, n_replicates: usize, n_draws: usize) -> usize {
    if n_replicates <= n_draws {
        m * n_draws / n_replicates
    } else {
        m % n_draws
    }
}

/// `M` simulated cause matrices from the posterior predictive distribution.
///
/// Replicate `m` uses draw θ_s ([`replicate_draw`]), samples a fresh `z_i`
/// per row from its conditional given `x_i^obs` and `f_i`, and adds
/// `N(0, σ²)` noise to `W z_i + A f_i`. Replicate `m` draws from the stream
/// `derive_seed(seed, "plfm-replicate", m)`, so output does not depend on
/// the thread count.
pub fn sample_posterior_predictive<T: Real>(
    draws: &PosteriorDraws<T>,
    x_obs: &MaskedMatrix<T>,
    f: ArrayView2<'_, T>,
    n_replicates: usize,
    seed: u64,
) -> Result<Vec<Array2<T>>> {
    check_inputs(draws, x_obs.values(), f)?;
    if n_replicates == 0 {
        return Err(Error::InvalidArgument("n_replicates must be at least 1".into()));
    }
    if x_obs.nrows() != draws.n_rows() {
        return Err(Error::Shape("x_obs rows differ from the fitted rows".into()));
    }
    let caches = draws
        .draws
        .iter()
        .map(PriorCache::new)
        .collect::<Result<Vec<_>>>()?;
    (0..n_replicates)
        .into_par_iter()
        .map(|m| {
            let s = replicate_draw(m, n_replicates, draws.len());
            let draw = &draws.draws[s];
            let mut rng = rng::substream(seed, "plfm-replicate", m as u64);
            let sd = draw.sigma2.sqrt();
            let mut out = Array2::zeros((x_obs.nrows(), x_obs.ncols()));
            for i in 0..x_obs.nrows() {
                let z = sample_z_cached(draw, &caches[s], x_obs.row(i), f.row(i), &mut rng)?;
                let mean = draw.mean(z.view(), f.row(i));
                for j in 0..x_obs.ncols() {
                    out[[i, j]] = mean[j] + sd * rng::std_normal::<T, _>(&mut rng);
                }
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{PlfmKind, PlfmSpec};
    use super::*;
    use ndarray::array;

    fn draw(w: Array2<f64>, a: Array2<f64>, sigma2: f64, n: usize) -> Draw<f64> {
        let k = w.ncols();
        Draw {
            w,
            a,
            sigma2,
            z: Array2::zeros((n, k)),
            z_mean: Array1::zeros(k),
            z_cov: Array2::eye(k),
        }
    }

    fn single(d: Draw<f64>) -> PosteriorDraws<f64> {
        PosteriorDraws::from_draws(PlfmSpec::new(PlfmKind::Ppca, d.latent_dim(), 0), vec![d]).unwrap()
    }

    #[test]
    fn reconstruction_hand_examples() {
        let pd = single(draw(array![[2.0], [1.0]], Array2::zeros((2, 0)), 0.5, 1));
        let r = reconstruct_mean(&pd, array![3.0].view(), Array1::zeros(0).view()).unwrap();
        assert_eq!(r.to_vec(), vec![6.0, 3.0]);
        let pd = single(draw(array![[2.0], [1.0]], array![[0.5], [-1.0]], 0.5, 1));
        let r = reconstruct_mean(&pd, array![0.0].view(), array![0.0].view()).unwrap();
        assert_eq!(r.to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn univariate_log_likelihood() {
        // one observed entry: mean = a f = 0.5, variance = w² + σ² = 4 + 0.25
        let d = draw(array![[2.0], [1.0]], array![[0.5], [0.0]], 0.25, 1);
        let vals = array![1.7, 0.0];
        let obs = array![true, false];
        let row = MaskedRow {
            values: vals.view(),
            observed: obs.view(),
        };
        let ll = row_log_likelihood(&d, row, array![1.0].view()).unwrap();
        let v: f64 = 4.25;
        let want = -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (1.7f64 - 0.5).powi(2) / (2.0 * v);
        assert!((ll - want).abs() < 1e-14, "{ll} vs {want}");
        let none = array![false, false];
        let row = MaskedRow {
            values: vals.view(),
            observed: none.view(),
        };
        assert_eq!(row_log_likelihood(&d, row, array![1.0].view()).unwrap(), 0.0);
    }

    #[test]
    fn three_cause_row_matches_dense_density() {
        let mut d = draw(
            array![[1.0, 0.3], [-0.5, 0.8], [0.2, -1.1]],
            array![[0.4], [0.1], [-0.2]],
            0.3,
            1,
        );
        d.z_mean = array![0.2, -0.1];
        d.z_cov = array![[1.5, 0.3], [0.3, 0.7]];
        let f = array![0.9];
        let x = array![0.4, -1.2, 2.0];
        let obs = array![true, true, true];
        let ll = row_log_likelihood(
            &d,
            MaskedRow {
                values: x.view(),
                observed: obs.view(),
            },
            f.view(),
        )
        .unwrap();
        // Dense oracle: explicit inverse and determinant.
        let cov = d.w.dot(&d.z_cov).dot(&d.w.t()) + Array2::<f64>::eye(3) * 0.3;
        let mean = d.w.dot(&d.z_mean) + d.a.dot(&f);
        let inv = spd_inverse(cov.view()).unwrap();
        let e = &x - &mean;
        let quad = e.dot(&inv.dot(&e));
        let det = cov[[0, 0]] * (cov[[1, 1]] * cov[[2, 2]] - cov[[1, 2]] * cov[[2, 1]])
            - cov[[0, 1]] * (cov[[1, 0]] * cov[[2, 2]] - cov[[1, 2]] * cov[[2, 0]])
            + cov[[0, 2]] * (cov[[1, 0]] * cov[[2, 1]] - cov[[1, 1]] * cov[[2, 0]]);
        let want = -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad);
        assert!((ll - want).abs() < 1e-12, "{ll} vs {want}");
    }

    #[test]
    fn replicates_collapse_without_noise_and_are_deterministic() {
        let n = 5;
        let mut d = draw(array![[1.0], [2.0], [-1.0]], Array2::zeros((3, 0)), 1e-14, n);
        d.z = Array2::zeros((n, 1));
        let pd = single(d);
        let x = Array2::from_shape_fn((n, 3), |(i, j)| (i as f64 - 2.0) * [1.0, 2.0, -1.0][j]);
        let xm = MaskedMatrix::fully_observed(x.clone()).unwrap();
        let f = Array2::zeros((n, 0));
        let reps = sample_posterior_predictive(&pd, &xm, f.view(), 3, 9).unwrap();
        for r in &reps {
            for (a, b) in r.iter().zip(x.iter()) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
        let again = sample_posterior_predictive(&pd, &xm, f.view(), 3, 9).unwrap();
        assert_eq!(reps, again);
    }

    #[test]
    fn replicate_draw_indices() {
        assert_eq!(replicate_draw(0, 4, 8), 0);
        assert_eq!(replicate_draw(3, 4, 8), 6);
        assert_eq!(replicate_draw(9, 10, 4), 1);
    }
}
