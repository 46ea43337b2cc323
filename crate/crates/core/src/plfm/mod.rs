//! Covariate-augmented probabilistic latent factor models
//!
//! ```text
//! PPCA:  x_i  = W z_i + A f_i + ε_i,          ε_i  ~ N(0, σ² I_D)
//! BPMF:  x_ij = z_iᵀ v_j + A_jᵀ f_i + ε_ij,    ε_ij ~ N(0, σ²)
//! ```
//!
//! fitted by Gibbs sampling on a masked cause matrix. Rows `v_j` of the BPMF
//! loading matrix are stored in the same `D × K` slot as PPCA's `W`; the two
//! models differ only in their priors (BPMF adds a diagonal Gaussian /
//! inverse-gamma hierarchy on the means and variances of `z_i` and `v_j`).

mod gibbs;
mod io;
mod predictive;
mod simulate;

pub use gibbs::{fit_gibbs, ConditionalState, Sampler};
pub use simulate::{simulate_factor_data, SimulatedFactors};
pub use io::{read_draws, write_draws, DrawsFile, DRAWS_MAGIC, DRAWS_VERSION};
pub use predictive::{
    marginal_row_factor, reconstruct_mean, row_log_likelihood, sample_posterior_predictive,
    sample_z_conditional, MarginalFactor,
};

pub(crate) mod predictive_internal {
    pub(crate) use super::predictive::{replicate_draw, sample_z_cached, PriorCache};
}

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlfmKind {
    Ppca,
    Bpmf,
}

impl PlfmKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlfmKind::Ppca => "ppca",
            PlfmKind::Bpmf => "bpmf",
        }
    }
}

impl std::fmt::Display for PlfmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inverse-gamma prior with density ∝ x^{-shape-1} exp(-scale/x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

/// Hyperpriors of the BPMF hierarchy, shared by the `z` and `v` sides:
/// `μ_k ~ N(0, mean_scale²)` and `τ_k ~ InvGamma(variance_prior)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hierarchy {
    pub mean_scale: f64,
    pub variance_prior: InverseGammaPrior,
}

impl Default for Hierarchy {
    fn default() -> Self {
        Hierarchy {
            mean_scale: 1.0,
            variance_prior: InverseGammaPrior {
                shape: 3.0,
                scale: 2.0,
            },
        }
    }
}

/// Model definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlfmSpec {
    pub kind: PlfmKind,
    pub latent_dim: usize,
    /// Prior standard deviation of the loadings (`W` rows / `v_j`).
    pub prior_scale_loadings: f64,
    /// Prior standard deviation of the covariate coefficients `A`.
    pub prior_scale_coefficients: f64,
    pub noise_prior: InverseGammaPrior,
    /// BPMF only. `None` gives BPMF the fixed PPCA priors, making the two
    /// samplers identical.
    pub hierarchy: Option<Hierarchy>,
    pub seed: u64,
}

impl PlfmSpec {
    /// Default priors: N(0, 1) loadings and coefficients, σ² ~ InvGamma(3, 1),
    /// and for BPMF the hierarchy of [`Hierarchy::default`].
    pub fn new(kind: PlfmKind, latent_dim: usize, seed: u64) -> Self {
        PlfmSpec {
            kind,
            latent_dim,
            prior_scale_loadings: 1.0,
            prior_scale_coefficients: 1.0,
            noise_prior: InverseGammaPrior {
                shape: 3.0,
                scale: 1.0,
            },
            hierarchy: match kind {
                PlfmKind::Ppca => None,
                PlfmKind::Bpmf => Some(Hierarchy::default()),
            },
            seed,
        }
    }

    pub fn validate(&self, n_causes: usize) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent_dim must be at least 1".into()));
        }
        if n_causes < 2 {
            return Err(Error::InvalidArgument(format!(
                "a substitute confounder needs at least 2 causes, got {n_causes}"
            )));
        }
        if self.latent_dim >= n_causes {
            return Err(Error::InvalidArgument(format!(
                "latent_dim ({}) must be smaller than the number of causes ({n_causes})",
                self.latent_dim
            )));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.prior_scale_loadings) || !positive(self.prior_scale_coefficients) {
            return Err(Error::InvalidArgument("prior scales must be positive".into()));
        }
        if !positive(self.noise_prior.shape) || !positive(self.noise_prior.scale) {
            return Err(Error::InvalidArgument("noise prior must be positive".into()));
        }
        if let Some(h) = &self.hierarchy {
            if self.kind == PlfmKind::Ppca {
                return Err(Error::InvalidArgument("the hierarchy applies to BPMF only".into()));
            }
            if !positive(h.mean_scale)
                || !positive(h.variance_prior.shape)
                || !positive(h.variance_prior.scale)
            {
                return Err(Error::InvalidArgument("hierarchy hyperparameters must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Chain length settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    pub n_warmup: usize,
    pub n_samples: usize,
    pub thin: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings {
            n_warmup: 1000,
            n_samples: 500,
            thin: 2,
        }
    }
}

/// One retained state θ of the chain.
///
/// `z_mean` / `z_cov` are the prior mean and covariance of `z_i` in this
/// state: `0` and `I` for PPCA, the sampled hierarchy values for BPMF. After
/// alignment they are rotated together with `W` and `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw<T> {
    pub w: Array2<T>,
    pub a: Array2<T>,
    pub sigma2: T,
    pub z: Array2<T>,
    pub z_mean: Array1<T>,
    pub z_cov: Array2<T>,
}

impl<T: Real> Draw<T> {
    pub fn n_causes(&self) -> usize {
        self.w.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.a.ncols()
    }

    /// `W z + A f`.
    pub fn mean(&self, z: ArrayView1<'_, T>, f: ArrayView1<'_, T>) -> Array1<T> {
        let mut m = self.w.dot(&z);
        if self.a.ncols() > 0 {
            m += &self.a.dot(&f);
        }
        m
    }

    fn rotate(&mut self, r: &Array2<T>) {
        self.w = self.w.dot(r);
        self.z = self.z.dot(r);
        self.z_mean = r.t().dot(&self.z_mean);
        self.z_cov = r.t().dot(&self.z_cov).dot(r);
    }
}

/// Chain summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub iterations: usize,
    /// σ² at every retained draw.
    pub sigma2_trace: Vec<f64>,
    pub sigma2_mean: f64,
    pub sigma2_sd: f64,
    /// Effective sample size of the σ² trace (initial positive sequence).
    pub sigma2_ess: f64,
    /// Mean Frobenius distance of the aligned loadings to their mean.
    pub loading_spread: f64,
}

/// Retained Gibbs states of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws<T> {
    pub spec: PlfmSpec,
    pub settings: ChainSettings,
    pub draws: Vec<Draw<T>>,
    pub diagnostics: ChainDiagnostics,
}

impl<T: Real> PosteriorDraws<T> {
    /// Builds a draw set by hand (tests, constructed models). Shapes are
    /// checked; no alignment is applied.
    pub fn from_draws(spec: PlfmSpec, draws: Vec<Draw<T>>) -> Result<Self> {
        let first = draws
            .first()
            .ok_or_else(|| Error::InvalidArgument("at least one draw is required".into()))?;
        let (n, d, k, p) = (first.z.nrows(), first.w.nrows(), first.w.ncols(), first.a.ncols());
        for dr in &draws {
            let ok = dr.w.dim() == (d, k)
                && dr.a.dim() == (d, p)
                && dr.z.dim() == (n, k)
                && dr.z_mean.len() == k
                && dr.z_cov.dim() == (k, k);
            if !ok {
                return Err(Error::Shape("draws have inconsistent shapes".into()));
            }
            if !(dr.sigma2 > T::zero()) {
                return Err(Error::InvalidArgument("sigma2 must be positive in every draw".into()));
            }
        }
        let diagnostics = summarize_chain(&draws, draws.len());
        Ok(PosteriorDraws {
            settings: ChainSettings {
                n_warmup: 0,
                n_samples: draws.len(),
                thin: 1,
            },
            spec,
            draws,
            diagnostics,
        })
    }

    pub fn kind(&self) -> PlfmKind {
        self.spec.kind
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn n_rows(&self) -> usize {
        self.draws[0].z.nrows()
    }

    pub fn n_causes(&self) -> usize {
        self.draws[0].w.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.draws[0].w.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.draws[0].a.ncols()
    }

    pub fn mean_w(&self) -> Array2<T> {
        mean_of(self.draws.iter().map(|d| &d.w))
    }

    pub fn mean_a(&self) -> Array2<T> {
        mean_of(self.draws.iter().map(|d| &d.a))
    }

    pub fn mean_sigma2(&self) -> T {
        self.draws.iter().map(|d| d.sigma2).sum::<T>() / T::of_usize(self.draws.len())
    }
}

fn mean_of<'a, T: Real + 'a>(mut it: impl Iterator<Item = &'a Array2<T>>) -> Array2<T> {
    let first = it.next().expect("non-empty draws");
    let mut acc = first.clone();
    let mut n = 1usize;
    for m in it {
        acc += m;
        n += 1;
    }
    acc.mapv_inplace(|v| v / T::of_usize(n));
    acc
}

/// `Ẑ = E[Z | X_obs, F]`, the posterior mean of the aligned `Z` draws.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstituteConfounder<T> {
    pub z_hat: Array2<T>,
}

pub fn extract_substitute<T: Real>(draws: &PosteriorDraws<T>) -> Result<SubstituteConfounder<T>> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no posterior draws".into()));
    }
    let z_hat = mean_of(draws.draws.iter().map(|d| &d.z));
    if z_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("substitute confounder is not finite".into()));
    }
    Ok(SubstituteConfounder { z_hat })
}

/// Rotates every draw onto a common latent basis by generalized Procrustes
/// analysis of the stacked `[W; Z]` matrices (three passes). The model is
/// invariant under `z ↦ Rᵀz, W ↦ WR`, so this only removes rotational
/// drift between draws before they are averaged.
pub fn align_draws<T: Real>(draws: &mut [Draw<T>]) {
    if draws.len() < 2 {
        return;
    }
    let stacked = |d: &Draw<T>| {
        ndarray::concatenate(Axis(0), &[d.w.view(), d.z.view()]).expect("same latent dim")
    };
    let mut reference = stacked(&draws[0]);
    for _ in 0..3 {
        let mut next = Array2::zeros(reference.dim());
        for d in draws.iter_mut() {
            let m = stacked(d);
            if let Some(r) = crate::linalg::polar_rotation(m.t().dot(&reference).view()) {
                d.rotate(&r);
            }
            next += &stacked(d);
        }
        next.mapv_inplace(|v| v / T::of_usize(draws.len()));
        reference = next;
    }
}

pub(crate) fn summarize_chain<T: Real>(draws: &[Draw<T>], iterations: usize) -> ChainDiagnostics {
    let trace: Vec<f64> = draws.iter().map(|d| d.sigma2.to_f64_lossy()).collect();
    let n = trace.len() as f64;
    let mean = trace.iter().sum::<f64>() / n;
    let var = if trace.len() > 1 {
        trace.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let spread = if draws.is_empty() {
        0.0
    } else {
        let wbar = mean_of(draws.iter().map(|d| &d.w));
        draws
            .iter()
            .map(|d| {
                (&d.w - &wbar)
                    .iter()
                    .map(|v| v.to_f64_lossy().powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / n
    };
    ChainDiagnostics {
        iterations,
        sigma2_ess: effective_sample_size(&trace),
        sigma2_trace: trace,
        sigma2_mean: mean,
        sigma2_sd: var.sqrt(),
        loading_spread: spread,
    }
}

/// Effective sample size using Geyer's initial positive sequence.
pub fn effective_sample_size(trace: &[f64]) -> f64 {
    let n = trace.len();
    if n < 4 {
        return n as f64;
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let c0 = trace.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| {
        trace[..n - lag]
            .iter()
            .zip(&trace[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / (n as f64 * c0)
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    n as f64 / tau
}

/// Shape check shared by the operations that take a `(draws, x, f)` triple.
pub(crate) fn check_inputs<T: Real>(
    draws: &PosteriorDraws<T>,
    x: ArrayView2<'_, T>,
    f: ArrayView2<'_, T>,
) -> Result<()> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no posterior draws".into()));
    }
    if x.ncols() != draws.n_causes() {
        return Err(Error::Shape(format!(
            "matrix has {} causes, model has {}",
            x.ncols(),
            draws.n_causes()
        )));
    }
    if f.ncols() != draws.n_covariates() || f.nrows() != x.nrows() {
        return Err(Error::Shape("covariates do not match the model or rows".into()));
    }
    Ok(())
}
