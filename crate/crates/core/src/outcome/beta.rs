//! Bayesian Beta regression with a logit mean link.
//!
//! `y_i ~ Beta(μ_i φ, (1 - μ_i) φ)`, `logit μ_i = β0 + x_i·β`. Sampled by
//! random-walk Metropolis on `θ = (β0, β, log φ)` started at the posterior
//! mode, with a proposal shaped by the inverse Hessian there and a scale
//! tuned during warmup.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::scalar::Real;
use crate::special::{digamma, ln_gamma, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaPrior {
    /// Standard deviation of the normal prior on each slope.
    pub coefficient_scale: f64,
    /// Standard deviation of the normal prior on the intercept.
    pub intercept_scale: f64,
    /// `log φ ~ N(log_phi_mean, log_phi_scale²)`.
    pub log_phi_mean: f64,
    pub log_phi_scale: f64,
}

impl Default for BetaPrior {
    fn default() -> Self {
        BetaPrior {
            coefficient_scale: 2.5,
            intercept_scale: 10.0,
            log_phi_mean: 0.0,
            log_phi_scale: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaMcmcConfig {
    pub n_warmup: usize,
    pub n_samples: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for BetaMcmcConfig {
    fn default() -> Self {
        BetaMcmcConfig {
            n_warmup: 1000,
            n_samples: 2000,
            thin: 1,
            seed: 0,
        }
    }
}

/// Posterior draws of `(β0, β, φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaRegFit<T> {
    /// `S × (p + 2)`: intercept, slopes, then precision `φ`.
    pub draws: Array2<T>,
    /// Parameter names matching the columns of `draws`.
    pub names: Vec<String>,
    pub mode: Array1<T>,
    pub acceptance_rate: f64,
    /// Acceptance outside [0.05, 0.8]: the chain is probably not mixing.
    pub poorly_mixed: bool,
    pub prior: BetaPrior,
    pub config: BetaMcmcConfig,
}

impl<T: Real> BetaRegFit<T> {
    pub fn n_draws(&self) -> usize {
        self.draws.nrows()
    }

    /// `S × (p + 1)` view of the intercept and slope draws.
    pub fn coefficient_draws(&self) -> ArrayView2<'_, T> {
        let p1 = self.draws.ncols() - 1;
        self.draws.slice(ndarray::s![.., ..p1])
    }

    pub fn phi_draws(&self) -> ArrayView1<'_, T> {
        self.draws.column(self.draws.ncols() - 1)
    }
}

fn check_design<T: Real>(x: ArrayView2<'_, T>, y: ArrayView1<'_, T>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "design has {} rows, outcome has {}",
            x.nrows(),
            y.len()
        )));
    }
    if let Some(v) = y.iter().find(|&&v| !(v > T::zero() && v < T::one())) {
        return Err(Error::InvalidArgument(format!(
            "beta regression needs outcomes strictly inside (0, 1), found {v}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("design contains non-finite values".into()));
    }
    Ok(())
}

/// Log-likelihood and its gradient with respect to `(β0, β, φ)`.
pub fn beta_log_likelihood<T: Real>(
    beta0: T,
    beta: ArrayView1<'_, T>,
    phi: T,
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
) -> (T, Array1<T>) {
    let p = beta.len();
    let mut grad = Array1::zeros(p + 2);
    let mut ll = T::zero();
    let lg_phi = ln_gamma(phi);
    let dg_phi = digamma(phi);
    for (xi, &yi) in x.rows().into_iter().zip(y.iter()) {
        let eta = beta0 + xi.dot(&beta);
        let mu = sigmoid(eta);
        let (a, b) = (mu * phi, (T::one() - mu) * phi);
        let (ly, l1y) = (yi.ln(), (T::one() - yi).ln());
        ll += lg_phi - ln_gamma(a) - ln_gamma(b) + (a - T::one()) * ly + (b - T::one()) * l1y;
        let (dga, dgb) = (digamma(a), digamma(b));
        let dmu = phi * (dgb - dga + ly - l1y);
        let deta = dmu * mu * (T::one() - mu);
        grad[0] += deta;
        for j in 0..p {
            grad[1 + j] += deta * xi[j];
        }
        grad[p + 1] += dg_phi - mu * dga - (T::one() - mu) * dgb + mu * ly + (T::one() - mu) * l1y;
    }
    (ll, grad)
}

/// Log-posterior (up to a constant) at `θ = (β0, β, log φ)` and its gradient
/// in those coordinates.
pub fn beta_log_posterior<T: Real>(
    theta: ArrayView1<'_, T>,
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    prior: &BetaPrior,
) -> (T, Array1<T>) {
    let p = theta.len() - 2;
    let phi = theta[p + 1].exp();
    let (ll, mut g) = beta_log_likelihood(theta[0], theta.slice(ndarray::s![1..p + 1]), phi, x, y);
    // chain rule for log φ
    g[p + 1] *= phi;
    let mut lp = ll;
    let s0 = T::lit(prior.intercept_scale);
    lp -= T::lit(0.5) * (theta[0] / s0).powi(2);
    g[0] -= theta[0] / (s0 * s0);
    let s = T::lit(prior.coefficient_scale);
    for j in 1..=p {
        lp -= T::lit(0.5) * (theta[j] / s).powi(2);
        g[j] -= theta[j] / (s * s);
    }
    let (m, sl) = (T::lit(prior.log_phi_mean), T::lit(prior.log_phi_scale));
    lp -= T::lit(0.5) * ((theta[p + 1] - m) / sl).powi(2);
    g[p + 1] -= (theta[p + 1] - m) / (sl * sl);
    (lp, g)
}

fn log_posterior_value<T: Real>(
    theta: &Array1<T>,
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    prior: &BetaPrior,
) -> T {
    let p = theta.len() - 2;
    let phi = theta[p + 1].exp();
    let lg_phi = ln_gamma(phi);
    let beta = theta.slice(ndarray::s![1..p + 1]);
    let mut ll = T::zero();
    for (xi, &yi) in x.rows().into_iter().zip(y.iter()) {
        let mu = sigmoid(theta[0] + xi.dot(&beta));
        let (a, b) = (mu * phi, (T::one() - mu) * phi);
        ll += lg_phi - ln_gamma(a) - ln_gamma(b)
            + (a - T::one()) * yi.ln()
            + (b - T::one()) * (T::one() - yi).ln();
    }
    let half = T::lit(0.5);
    let s0 = T::lit(prior.intercept_scale);
    let s = T::lit(prior.coefficient_scale);
    let (m, sl) = (T::lit(prior.log_phi_mean), T::lit(prior.log_phi_scale));
    ll -= half * (theta[0] / s0).powi(2);
    for j in 1..=p {
        ll -= half * (theta[j] / s).powi(2);
    }
    ll - half * ((theta[p + 1] - m) / sl).powi(2)
}

/// Negative Hessian by central differences of the analytic gradient,
/// symmetrized.
fn negative_hessian<T: Real>(
    theta: &Array1<T>,
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    prior: &BetaPrior,
) -> Array2<T> {
    let d = theta.len();
    let mut h = Array2::zeros((d, d));
    let eps = T::epsilon().cbrt();
    for j in 0..d {
        let step = eps * (T::one() + theta[j].abs());
        let mut up = theta.clone();
        up[j] += step;
        let mut dn = theta.clone();
        dn[j] -= step;
        let gu = beta_log_posterior(up.view(), x, y, prior).1;
        let gd = beta_log_posterior(dn.view(), x, y, prior).1;
        for i in 0..d {
            h[[i, j]] = -(gu[i] - gd[i]) / (step + step);
        }
    }
    let ht = h.t().to_owned();
    (h + ht) * T::lit(0.5)
}

/// Posterior mode by damped Newton from a moment-based start.
fn posterior_mode<T: Real>(
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    prior: &BetaPrior,
) -> Result<(Array1<T>, Array2<T>)> {
    let p = x.ncols();
    let n = T::of_usize(y.len());
    let mean = y.sum() / n;
    let var = y.iter().map(|&v| (v - mean).powi(2)).sum::<T>() / n;
    let phi0 = (mean * (T::one() - mean) / var.max(T::epsilon()) - T::one()).max(T::lit(0.5));
    let mut theta = Array1::zeros(p + 2);
    theta[0] = (mean / (T::one() - mean)).ln();
    theta[p + 1] = phi0.ln();
    let mut lp = log_posterior_value(&theta, x, y, prior);
    let tol = T::lit(1e-6).max(T::epsilon().sqrt());
    for _ in 0..200 {
        let (_, g) = beta_log_posterior(theta.view(), x, y, prior);
        let h = negative_hessian(&theta, x, y, prior);
        let step = match linalg::cholesky(h.view()) {
            Ok(l) => {
                let mut s = g.to_vec();
                linalg::solve_lower_in_place(l.as_slice().expect("contiguous"), p + 2, &mut s);
                linalg::solve_lower_transpose_in_place(
                    l.as_slice().expect("contiguous"),
                    p + 2,
                    &mut s,
                );
                Array1::from(s)
            }
            // not concave here: fall back to a short gradient step
            Err(_) => &g * (T::lit(1e-3) / (T::one() + g.dot(&g).sqrt())),
        };
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &theta + &(&step * t);
            let lc = log_posterior_value(&cand, x, y, prior);
            if lc.is_finite() && lc >= lp {
                theta = cand;
                lp = lc;
                accepted = true;
                break;
            }
            t *= T::lit(0.5);
        }
        let gnorm = g.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if !accepted || gnorm < tol || (&step * t).iter().all(|v| v.abs() < tol) {
            break;
        }
    }
    if !lp.is_finite() {
        return Err(Error::Numerical("beta regression posterior mode is not finite".into()));
    }
    let h = negative_hessian(&theta, x, y, prior);
    Ok((theta, h))
}

/// Inverse of the negative Hessian at the mode, with eigenvalues floored so
/// that flat or slightly non-concave directions still get a finite,
/// positive-definite proposal.
fn proposal_covariance<T: Real>(neg_h: &Array2<T>) -> Result<Array2<T>> {
    if let Ok(c) = linalg::spd_inverse(neg_h.view()) {
        if linalg::cholesky(c.view()).is_ok() {
            return Ok(c);
        }
    }
    let (vals, vecs) = linalg::symmetric_eigen(neg_h.view());
    let top = vals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if !(top > T::zero()) || !top.is_finite() {
        return Err(Error::Numerical("beta regression curvature is degenerate at the mode".into()));
    }
    let floor = top * T::lit(1e-8);
    let d = vals.len();
    let mut cov = Array2::zeros((d, d));
    for k in 0..d {
        let inv = T::one() / vals[k].max(floor);
        for i in 0..d {
            for j in 0..d {
                cov[[i, j]] += vecs[[i, k]] * vecs[[j, k]] * inv;
            }
        }
    }
    Ok(cov)
}

/// Fits the Beta regression of `y` on the columns of `x`.
pub fn fit_beta_regression<T: Real>(
    x: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    names: &[String],
    prior: &BetaPrior,
    config: &BetaMcmcConfig,
) -> Result<BetaRegFit<T>> {
    check_design(x, y)?;
    if names.len() != x.ncols() {
        return Err(Error::Shape(format!(
            "{} names for {} design columns",
            names.len(),
            x.ncols()
        )));
    }
    if config.n_samples == 0 || config.thin == 0 {
        return Err(Error::InvalidArgument("n_samples and thin must be positive".into()));
    }
    let d = x.ncols() + 2;
    let (mode, neg_h) = posterior_mode(x, y, prior)?;
    let cov = proposal_covariance(&neg_h)?;
    let chol = linalg::cholesky(cov.view())?;
    let mut rng = rng::substream(config.seed, "beta-regression", 0);
    let base = T::lit(2.38) / T::of_usize(d).sqrt();
    let mut log_scale = T::zero();
    let mut theta = mode.clone();
    let mut lp = log_posterior_value(&theta, x, y, prior);
    let mut draws = Array2::zeros((config.n_samples, d));
    let total = config.n_warmup + config.n_samples * config.thin;
    let (mut window_acc, mut window_len) = (0usize, 0usize);
    let mut accepted_kept = 0usize;
    let mut kept = 0usize;
    let mut noise = Array1::zeros(d);
    for it in 0..total {
        for v in noise.iter_mut() {
            *v = rng::std_normal::<T, _>(&mut rng);
        }
        let step = chol.dot(&noise) * (base * log_scale.exp());
        let cand = &theta + &step;
        let lc = log_posterior_value(&cand, x, y, prior);
        let accept = lc.is_finite() && {
            let u: T = rng::uniform(&mut rng);
            u.ln() < lc - lp
        };
        if accept {
            theta = cand;
            lp = lc;
        }
        if it < config.n_warmup {
            window_len += 1;
            window_acc += accept as usize;
            if window_len == 50 {
                let rate = window_acc as f64 / 50.0;
                if rate < 0.2 {
                    log_scale -= T::lit(0.2);
                } else if rate > 0.4 {
                    log_scale += T::lit(0.2);
                }
                window_acc = 0;
                window_len = 0;
            }
        } else {
            accepted_kept += accept as usize;
            let post = it - config.n_warmup;
            if (post + 1) % config.thin == 0 {
                let mut row = draws.row_mut(kept);
                row.assign(&theta);
                row[d - 1] = theta[d - 1].exp();
                kept += 1;
            }
        }
    }
    let acceptance_rate = accepted_kept as f64 / (config.n_samples * config.thin) as f64;
    let poorly_mixed = !(0.05..=0.8).contains(&acceptance_rate);
    if poorly_mixed {
        log::warn!("beta regression acceptance rate {acceptance_rate:.3} is outside [0.05, 0.8]");
    }
    let mut all_names = Vec::with_capacity(d);
    all_names.push("intercept".to_string());
    all_names.extend(names.iter().cloned());
    all_names.push("phi".to_string());
    let mut mode_out = mode;
    mode_out[d - 1] = mode_out[d - 1].exp();
    Ok(BetaRegFit {
        draws,
        names: all_names,
        mode: mode_out,
        acceptance_rate,
        poorly_mixed,
        prior: *prior,
        config: *config,
    })
}
