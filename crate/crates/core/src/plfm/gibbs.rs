//! The Gibbs engine.
//!
//! One sweep updates the parameter blocks in this fixed order:
//!
//! 1. every row `z_i` (Gaussian, given `W`, `A`, σ² and the `z` prior);
//! 2. every joint row `[w_j, a_j]` (Gaussian, given `Z`, σ² and the priors);
//! 3. BPMF hierarchy only: `μ_z, τ_z, μ_v, τ_v` per latent dimension
//!    (Gaussian means, inverse-gamma variances);
//! 4. σ² (inverse-gamma).
//!
//! Held-out cells enter no likelihood term. The sampler works on a private
//! zero-filled copy of the observed matrix, so the values stored in masked
//! cells cannot influence the chain.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use super::{align_draws, summarize_chain, ChainSettings, Draw, PlfmSpec, PosteriorDraws};
use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_in_place, solve_lower_in_place, solve_lower_transpose_in_place, spd_inverse,
    symmetric_eigen,
};
use crate::rng::{self, StreamRng};
use crate::scalar::Real;

/// Full state of the chain. BPMF hierarchy values are carried for PPCA too
/// (fixed at `μ = 0`, `τ_z = 1`, `τ_v = prior_scale_loadings²`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalState<T> {
    pub w: Array2<T>,
    pub a: Array2<T>,
    pub z: Array2<T>,
    pub sigma2: T,
    pub z_mu: Vec<T>,
    pub z_tau: Vec<T>,
    pub v_mu: Vec<T>,
    pub v_tau: Vec<T>,
}

/// Gibbs sampler over a fixed data set. Exposed so single full-conditional
/// updates can be tested in isolation.
pub struct Sampler<T> {
    x0: Array2<T>,
    f: Array2<T>,
    missing_by_row: Vec<Vec<usize>>,
    missing_by_col: Vec<Vec<usize>>,
    n_obs: usize,
    coef_prec: T,
    noise_shape: T,
    noise_scale: T,
    hierarchy: Option<(T, T, T)>,
    pub state: ConditionalState<T>,
    // scratch
    gram: Vec<T>,
    cross: Vec<T>,
}

impl<T: Real> Sampler<T> {
    pub fn new(x_obs: &MaskedMatrix<T>, f: ArrayView2<'_, T>, spec: &PlfmSpec) -> Result<Self> {
        let (n, d) = (x_obs.nrows(), x_obs.ncols());
        spec.validate(d)?;
        if f.nrows() != n {
            return Err(Error::Shape(format!(
                "covariates have {} rows, causes have {n}",
                f.nrows()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariates must be finite".into()));
        }
        let mut x0 = x_obs.values().to_owned();
        x0.zip_mut_with(&x_obs.observed(), |v, &o| {
            if !o {
                *v = T::zero()
            }
        });
        let mut missing_by_row = vec![Vec::new(); n];
        let mut missing_by_col = vec![Vec::new(); d];
        for ((i, j), &o) in x_obs.observed().indexed_iter() {
            if !o {
                missing_by_row[i].push(j);
                missing_by_col[j].push(i);
            }
        }
        if let Some(i) = missing_by_row.iter().position(|m| m.len() == d) {
            return Err(Error::InvalidArgument(format!(
                "row {} has no observed cause",
                i + 1
            )));
        }
        let k = spec.latent_dim;
        let p = f.ncols();
        let q = k + p;
        let s_w = T::lit(spec.prior_scale_loadings);
        let s_a = T::lit(spec.prior_scale_coefficients);
        let (w, a, z, sigma2) = pca_init(&x0, f, &missing_by_col, k);
        let state = ConditionalState {
            w,
            a,
            z,
            sigma2,
            z_mu: vec![T::zero(); k],
            z_tau: vec![T::one(); k],
            v_mu: vec![T::zero(); k],
            v_tau: vec![s_w * s_w; k],
        };
        Ok(Sampler {
            n_obs: n * d - missing_by_row.iter().map(Vec::len).sum::<usize>(),
            x0,
            f: f.to_owned(),
            missing_by_row,
            missing_by_col,
            coef_prec: T::one() / (s_a * s_a),
            noise_shape: T::lit(spec.noise_prior.shape),
            noise_scale: T::lit(spec.noise_prior.scale),
            hierarchy: spec.hierarchy.map(|h| {
                (
                    T::lit(h.mean_scale * h.mean_scale),
                    T::lit(h.variance_prior.shape),
                    T::lit(h.variance_prior.scale),
                )
            }),
            state,
            gram: vec![T::zero(); q * q],
            cross: vec![T::zero(); q * d],
        })
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        (self.x0.nrows(), self.x0.ncols(), self.state.w.ncols(), self.f.ncols())
    }

    /// Residual target of cause `j` in row `i` for the `z` update:
    /// `x_ij - a_j·f_i`.
    fn target(&self, i: usize, j: usize) -> T {
        let mut t = self.x0[[i, j]];
        for c in 0..self.f.ncols() {
            t -= self.state.a[[j, c]] * self.f[[i, c]];
        }
        t
    }

    /// Precision matrix and linear term of the Gaussian conditional of `z_i`.
    pub fn z_conditional_natural(&self, i: usize) -> (Vec<T>, Vec<T>) {
        let (_, d, k, _) = self.dims();
        let st = &self.state;
        let inv_s2 = T::one() / st.sigma2;
        let mut prec = vec![T::zero(); k * k];
        let mut lin = vec![T::zero(); k];
        let miss = &self.missing_by_row[i];
        for j in 0..d {
            if miss.contains(&j) {
                continue;
            }
            let t = self.target(i, j) * inv_s2;
            for r in 0..k {
                let wr = st.w[[j, r]];
                lin[r] += wr * t;
                for c in 0..=r {
                    prec[r * k + c] += wr * st.w[[j, c]] * inv_s2;
                }
            }
        }
        for r in 0..k {
            for c in 0..r {
                prec[c * k + r] = prec[r * k + c];
            }
            prec[r * k + r] += T::one() / st.z_tau[r];
            lin[r] += st.z_mu[r] / st.z_tau[r];
        }
        (prec, lin)
    }

    /// Block 1: all rows of `Z`.
    pub fn step_z<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let (n, _, k, _) = self.dims();
        for i in 0..n {
            let (mut prec, lin) = self.z_conditional_natural(i);
            let draw = sample_natural(&mut prec, lin, k, rng).ok_or(Error::NonFinite {
                block: "z",
                iteration: 0,
            })?;
            for r in 0..k {
                self.state.z[[i, r]] = draw[r];
            }
        }
        Ok(())
    }

    fn refresh_gram(&mut self) {
        let (n, d, k, p) = self.dims();
        let q = k + p;
        self.gram.iter_mut().for_each(|v| *v = T::zero());
        self.cross.iter_mut().for_each(|v| *v = T::zero());
        let mut u = vec![T::zero(); q];
        for i in 0..n {
            self.fill_u(i, &mut u);
            for r in 0..q {
                for c in 0..=r {
                    self.gram[r * q + c] += u[r] * u[c];
                }
                for j in 0..d {
                    self.cross[r * d + j] += u[r] * self.x0[[i, j]];
                }
            }
        }
        for r in 0..q {
            for c in 0..r {
                self.gram[c * q + r] = self.gram[r * q + c];
            }
        }
    }

    fn fill_u(&self, i: usize, u: &mut [T]) {
        let k = self.state.z.ncols();
        for r in 0..k {
            u[r] = self.state.z[[i, r]];
        }
        for c in 0..self.f.ncols() {
            u[k + c] = self.f[[i, c]];
        }
    }

    /// Precision and linear term of the conditional of `[w_j, a_j]`.
    /// Requires [`Sampler::prepare_loadings`] after the last `Z` change.
    pub fn loading_conditional_natural(&self, j: usize) -> (Vec<T>, Vec<T>) {
        let (_, d, k, p) = self.dims();
        let q = k + p;
        let st = &self.state;
        let inv_s2 = T::one() / st.sigma2;
        let mut prec = self.gram.clone();
        let mut u = vec![T::zero(); q];
        for &i in &self.missing_by_col[j] {
            self.fill_u(i, &mut u);
            for r in 0..q {
                for c in 0..q {
                    prec[r * q + c] -= u[r] * u[c];
                }
            }
        }
        prec.iter_mut().for_each(|v| *v *= inv_s2);
        let mut lin: Vec<T> = (0..q).map(|r| self.cross[r * d + j] * inv_s2).collect();
        for r in 0..k {
            let pp = T::one() / st.v_tau[r];
            prec[r * q + r] += pp;
            lin[r] += pp * st.v_mu[r];
        }
        for c in 0..p {
            prec[(k + c) * q + k + c] += self.coef_prec;
        }
        (prec, lin)
    }

    pub fn prepare_loadings(&mut self) {
        self.refresh_gram();
    }

    /// Block 2: all joint rows `[w_j, a_j]`.
    pub fn step_loadings<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let (_, d, k, p) = self.dims();
        let q = k + p;
        self.refresh_gram();
        for j in 0..d {
            let (mut prec, lin) = self.loading_conditional_natural(j);
            let draw = sample_natural(&mut prec, lin, q, rng).ok_or(Error::NonFinite {
                block: "loadings",
                iteration: 0,
            })?;
            for r in 0..k {
                self.state.w[[j, r]] = draw[r];
            }
            for c in 0..p {
                self.state.a[[j, c]] = draw[k + c];
            }
        }
        Ok(())
    }

    /// Block 3: BPMF hierarchy, means then variances. No-op without a
    /// hierarchy.
    pub fn step_hierarchy<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.step_hierarchy_means(rng);
        self.step_hierarchy_variances(rng);
    }

    /// `μ_k | τ_k, column k` ~ N(v Σ_i m_ik / τ_k, v), v = 1/(1/s² + n/τ_k),
    /// for the `z` side (rows of `Z`) and the `v` side (rows of `W`).
    pub fn step_hierarchy_means<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let Some((mean_var, _, _)) = self.hierarchy else {
            return;
        };
        let st = &mut self.state;
        for (m, mu, tau) in [
            (&st.z, &mut st.z_mu, &st.z_tau),
            (&st.w, &mut st.v_mu, &st.v_tau),
        ] {
            let n = T::of_usize(m.nrows());
            for r in 0..m.ncols() {
                let v = T::one() / (T::one() / mean_var + n / tau[r]);
                let mean = v * m.column(r).sum() / tau[r];
                mu[r] = mean + v.sqrt() * rng::std_normal::<T, _>(rng);
            }
        }
    }

    /// `τ_k | μ_k, column k` ~ InvGamma(a + n/2, b + Σ_i (m_ik - μ_k)²/2).
    pub fn step_hierarchy_variances<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let Some((_, shape, scale)) = self.hierarchy else {
            return;
        };
        let half = T::lit(0.5);
        let st = &mut self.state;
        for (m, mu, tau) in [
            (&st.z, &st.z_mu, &mut st.z_tau),
            (&st.w, &st.v_mu, &mut st.v_tau),
        ] {
            let n = T::of_usize(m.nrows());
            for r in 0..m.ncols() {
                let ss: T = m.column(r).iter().map(|&x| (x - mu[r]) * (x - mu[r])).sum();
                tau[r] = rng::inverse_gamma(rng, shape + half * n, scale + half * ss);
            }
        }
    }

    /// Sum of squared residuals over observed cells.
    pub fn observed_ssr(&self) -> T {
        let (n, d, k, p) = self.dims();
        let st = &self.state;
        let mut ssr = T::zero();
        for i in 0..n {
            let miss = &self.missing_by_row[i];
            for j in 0..d {
                if miss.contains(&j) {
                    continue;
                }
                let mut m = T::zero();
                for r in 0..k {
                    m += st.w[[j, r]] * st.z[[i, r]];
                }
                for c in 0..p {
                    m += st.a[[j, c]] * self.f[[i, c]];
                }
                let e = self.x0[[i, j]] - m;
                ssr += e * e;
            }
        }
        ssr
    }

    /// Shape and scale of the inverse-gamma conditional of σ².
    pub fn sigma2_conditional(&self) -> (T, T) {
        let half = T::lit(0.5);
        (
            self.noise_shape + half * T::of_usize(self.n_obs),
            self.noise_scale + half * self.observed_ssr(),
        )
    }

    /// Block 4: σ².
    pub fn step_sigma2<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let (shape, scale) = self.sigma2_conditional();
        self.state.sigma2 = rng::inverse_gamma(rng, shape, scale);
    }

    /// One full sweep. `iteration` is used in error messages only.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R, iteration: usize) -> Result<()> {
        let tag = |e: Error| match e {
            Error::NonFinite { block, .. } => Error::NonFinite { block, iteration },
            other => other,
        };
        self.step_z(rng).map_err(tag)?;
        check(self.state.z.iter(), "z", iteration)?;
        self.step_loadings(rng).map_err(tag)?;
        check(self.state.w.iter().chain(self.state.a.iter()), "loadings", iteration)?;
        self.step_hierarchy(rng);
        check(
            self.state
                .z_mu
                .iter()
                .chain(&self.state.z_tau)
                .chain(&self.state.v_mu)
                .chain(&self.state.v_tau),
            "hierarchy",
            iteration,
        )?;
        self.step_sigma2(rng);
        if !(self.state.sigma2 > T::zero()) || !self.state.sigma2.is_finite() {
            return Err(Error::NonFinite {
                block: "sigma2",
                iteration,
            });
        }
        Ok(())
    }

    fn snapshot(&self) -> Draw<T> {
        let k = self.state.w.ncols();
        let mut z_cov = Array2::zeros((k, k));
        for r in 0..k {
            z_cov[[r, r]] = self.state.z_tau[r];
        }
        Draw {
            w: self.state.w.clone(),
            a: self.state.a.clone(),
            sigma2: self.state.sigma2,
            z: self.state.z.clone(),
            z_mean: Array1::from(self.state.z_mu.clone()),
            z_cov,
        }
    }
}

fn check<'a, T: Real + 'a>(
    mut values: impl Iterator<Item = &'a T>,
    block: &'static str,
    iteration: usize,
) -> Result<()> {
    if values.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { block, iteration })
    }
}

/// Draws from `N(P⁻¹ b, P⁻¹)` given the precision `P` (overwritten by its
/// Cholesky factor) and linear term `b`.
fn sample_natural<T: Real, R: Rng + ?Sized>(
    prec: &mut [T],
    mut lin: Vec<T>,
    n: usize,
    rng: &mut R,
) -> Option<Vec<T>> {
    if !cholesky_in_place(prec, n) {
        return None;
    }
    solve_lower_in_place(prec, n, &mut lin);
    for v in lin.iter_mut() {
        *v += rng::std_normal::<T, _>(rng);
    }
    solve_lower_transpose_in_place(prec, n, &mut lin);
    lin.iter().all(|v| v.is_finite()).then_some(lin)
}

/// Starting point: `A` by least squares of the column-mean-filled observed
/// matrix on `F`, then principal components of the remainder,
/// `W = V_K Λ_K^{1/2}`, `Z = R V_K Λ_K^{-1/2}`, σ² = mean of the discarded
/// eigenvalues.
#[allow(clippy::type_complexity)]
fn pca_init<T: Real>(
    x0: &Array2<T>,
    f: ArrayView2<'_, T>,
    missing_by_col: &[Vec<usize>],
    k: usize,
) -> (Array2<T>, Array2<T>, Array2<T>, T) {
    let (n, d) = x0.dim();
    let mut filled = x0.clone();
    for j in 0..d {
        let n_obs = n - missing_by_col[j].len();
        let mean = if n_obs > 0 {
            filled.column(j).sum() / T::of_usize(n_obs)
        } else {
            T::zero()
        };
        for &i in &missing_by_col[j] {
            filled[[i, j]] = mean;
        }
    }
    let p = f.ncols();
    let mut a = Array2::zeros((d, p));
    if p > 0 {
        let mut gram = f.t().dot(&f);
        let ridge = T::lit(1e-8) * (gram.diag().sum() / T::of_usize(p) + T::one());
        for c in 0..p {
            gram[[c, c]] += ridge;
        }
        if let Ok(inv) = spd_inverse(gram.view()) {
            a = inv.dot(&f.t().dot(&filled)).reversed_axes();
            filled -= &f.dot(&a.t());
        }
    }
    let means = filled.mean_axis(ndarray::Axis(0)).expect("n > 0");
    let centered = &filled - &means;
    let denom = T::of_usize(n.max(2) - 1);
    let cov = centered.t().dot(&centered).mapv(|v| v / denom);
    let (vals, vecs) = symmetric_eigen(cov.view());
    let mut w = Array2::zeros((d, k));
    let mut z = Array2::zeros((n, k));
    for r in 0..k {
        let lam = vals[r];
        if lam > T::lit(1e-12) {
            let s = lam.sqrt();
            let v = vecs.column(r);
            for j in 0..d {
                w[[j, r]] = v[j] * s;
            }
            let scores = centered.dot(&v);
            for i in 0..n {
                z[[i, r]] = scores[i] / s;
            }
        }
    }
    let rest = d - k;
    let tail = vals.iter().skip(k).map(|&v| v.max(T::zero())).sum::<T>() / T::of_usize(rest);
    (w, a, z, tail.max(T::lit(1e-6)))
}

/// Fits the model to the observed cells of `x_obs` with covariates `f`.
///
/// Runs `n_warmup` sweeps, then keeps every `thin`-th state until
/// `n_samples` are retained; the retained draws are aligned to a common
/// latent basis ([`super::align_draws`]). Deterministic given `spec.seed`;
/// the stream is derived as `derive_seed(seed, "plfm-gibbs", 0)` and does not
/// depend on the model kind.
pub fn fit_gibbs<T: Real>(
    x_obs: &MaskedMatrix<T>,
    f: ArrayView2<'_, T>,
    spec: &PlfmSpec,
    settings: ChainSettings,
) -> Result<PosteriorDraws<T>> {
    if settings.n_samples == 0 || settings.thin == 0 {
        return Err(Error::InvalidArgument("n_samples and thin must be at least 1".into()));
    }
    let mut sampler = Sampler::new(x_obs, f, spec)?;
    let mut rng: StreamRng = rng::substream(spec.seed, "plfm-gibbs", 0);
    let total = settings.n_warmup + settings.n_samples * settings.thin;
    let mut draws = Vec::with_capacity(settings.n_samples);
    for it in 0..total {
        sampler.sweep(&mut rng, it)?;
        if it >= settings.n_warmup && (it - settings.n_warmup + 1) % settings.thin == 0 {
            draws.push(sampler.snapshot());
        }
    }
    align_draws(&mut draws);
    let diagnostics = summarize_chain(&draws, total);
    log::debug!(
        "{} fit: {} sweeps, sigma2 mean {:.4}, ess {:.1}",
        spec.kind,
        total,
        diagnostics.sigma2_mean,
        diagnostics.sigma2_ess
    );
    Ok(PosteriorDraws {
        spec: spec.clone(),
        settings,
        draws,
        diagnostics,
    })
}
