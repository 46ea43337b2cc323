//! Semi-synthetic data with a known, cluster-valued confounder.
//!
//! Causes are standardized; the confounder `u` is the k-means cluster of each
//! row on the top two principal components. The binary outcome is drawn from
//!
//! ```text
//! y_i ~ Bernoulli(logit⁻¹(β0 + x̂_i β √ν_x/σ_x + u_i √(0.9 ν_z)/σ_u
//!                         + age_i γ √(0.1 ν_z)/σ_age + ε_i √ν_ε/σ_ε))
//! ```
//!
//! where `x̂_i` are the causes with age and gender regressed out, every
//! `σ` is the empirical standard deviation of the term it divides, and β0 is
//! tuned so that about half of the outcomes are positive.

mod benchmark;
mod cluster;

pub use benchmark::{
    run_benchmark, simulate_once, spearman, table1_grid, Arm, BenchmarkConfig, BenchmarkReport,
    BenchmarkRow, SimulationRecord, Spearman,
};
pub use cluster::{cluster_sizes, kmeans, lloyd, pca_top2, KMeansResult, KMEANS_MAX_ITER, KMEANS_RESTARTS};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{CauseKind, Dataset, DatasetParts};
use crate::error::{Error, Result};
use crate::linalg::ols_residuals;
use crate::rng;
use crate::special::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub nu_x: f64,
    pub nu_z: f64,
    pub n_clusters: usize,
    /// Percentiles of `N(0, sd²)` between which effects are set to zero.
    pub sparse_band: (f64, f64),
    pub effect_scale: f64,
    pub age_coef_scale: f64,
    /// Latent dimension of the substitute-confounder models.
    pub k_fit: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            nu_x: 0.45,
            nu_z: 0.45,
            n_clusters: 4,
            sparse_band: (20.0, 80.0),
            effect_scale: 0.5,
            age_coef_scale: 0.2,
            k_fit: 5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Splits `1 - nu_eps` between causes and confounding in the ratio
    /// `rx : rz`.
    pub fn from_ratio(rx: f64, rz: f64, nu_eps: f64) -> Result<Self> {
        if !(rx >= 0.0 && rz >= 0.0 && rx + rz > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid ratio {rx}/{rz}")));
        }
        let cfg = SynthConfig {
            nu_x: (1.0 - nu_eps) * rx / (rx + rz),
            nu_z: (1.0 - nu_eps) * rz / (rx + rz),
            ..SynthConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn nu_eps(&self) -> f64 {
        1.0 - self.nu_x - self.nu_z
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu_x >= 0.0 && self.nu_z >= 0.0 && self.nu_x + self.nu_z < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need nu_x, nu_z >= 0 and nu_x + nu_z < 1, got {} and {}",
                self.nu_x, self.nu_z
            )));
        }
        let (lo, hi) = self.sparse_band;
        if !(lo > 0.0 && lo < hi && hi < 100.0) {
            return Err(Error::InvalidArgument(format!("invalid percentile band ({lo}, {hi})")));
        }
        if self.n_clusters == 0 {
            return Err(Error::InvalidArgument("n_clusters must be positive".into()));
        }
        if !(self.effect_scale > 0.0) || !(self.age_coef_scale >= 0.0) {
            return Err(Error::InvalidArgument("effect scales must be positive".into()));
        }
        Ok(())
    }
}

/// Built-in stand-in for real causes: `D` correlated Gaussians driven by
/// two latent factors plus age and gender effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub n_factors: usize,
    pub factor_loading_sd: f64,
    pub age_loading_sd: f64,
    pub gender_loading_sd: f64,
    pub noise_sd: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            n_factors: 2,
            factor_loading_sd: 0.5,
            age_loading_sd: 0.5,
            gender_loading_sd: 0.3,
            noise_sd: 1.0,
        }
    }
}

/// Surrogate causes (`N × D`) and covariates (`N × 2`: age, gender).
pub fn surrogate_causes(n: usize, d: usize, cfg: &SurrogateConfig, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut r = rng::substream(seed, "synth-surrogate", 0);
    let nrm = |r: &mut rng::StreamRng| rng::std_normal::<f64, _>(r);
    let mut cov = Array2::zeros((n, 2));
    for i in 0..n {
        cov[[i, 0]] = nrm(&mut r);
        cov[[i, 1]] = (rng::uniform::<f64, _>(&mut r) < 0.5) as u8 as f64;
    }
    let b = Array2::from_shape_fn((d, 2), |(_, c)| {
        let sd = if c == 0 { cfg.age_loading_sd } else { cfg.gender_loading_sd };
        sd * nrm(&mut r)
    });
    let l = Array2::from_shape_fn((d, cfg.n_factors), |_| cfg.factor_loading_sd * nrm(&mut r));
    let g = Array2::from_shape_fn((n, cfg.n_factors), |_| nrm(&mut r));
    let noise = Array2::from_shape_fn((n, d), |_| cfg.noise_sd * nrm(&mut r));
    let x = cov.dot(&b.t()) + g.dot(&l.t()) + noise;
    (x, cov)
}

/// `n` draws from `N(0, sd²)` with every value strictly between the
/// `band` percentiles of that distribution set to zero.
pub fn sparse_normal(n: usize, sd: f64, band: (f64, f64), seed: u64) -> Result<Vec<f64>> {
    if !(sd > 0.0) {
        return Err(Error::InvalidArgument(format!("sd must be positive, got {sd}")));
    }
    if !(band.0 > 0.0 && band.0 < band.1 && band.1 < 100.0) {
        return Err(Error::InvalidArgument(format!("invalid percentile band {band:?}")));
    }
    let std = Normal::standard();
    let (lo, hi) = (std.inverse_cdf(band.0 / 100.0), std.inverse_cdf(band.1 / 100.0));
    let mut r = rng::substream(seed, "sparse-normal", 0);
    Ok((0..n)
        .map(|_| {
            let z: f64 = rng::std_normal(&mut r);
            if z > lo && z < hi {
                0.0
            } else {
                sd * z
            }
        })
        .collect())
}

/// The four weighted terms of the linear predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParts {
    pub causes: Array1<f64>,
    pub confounder: Array1<f64>,
    pub age: Array1<f64>,
    pub noise: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    /// Standardized causes, raw covariates (age, gender) and the binary
    /// outcome.
    pub dataset: Dataset<f64>,
    /// Cluster label per row, `1..=n_clusters`.
    pub u: Vec<usize>,
    pub true_beta: Vec<f64>,
    pub true_gamma: f64,
    pub sigma_k: Vec<f64>,
    pub beta0: f64,
    /// `β_j √ν_x / σ_x`: the per-cause effects on the logit scale.
    pub true_effects: Vec<f64>,
    pub parts: PredictorParts,
    pub positive_fraction: f64,
    pub config: SynthConfig,
}

fn sd(v: &Array1<f64>) -> f64 {
    let n = v.len() as f64;
    let m = v.sum() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `v · w / sd(v)`, or zeros when `v` is constant or `w` is zero.
fn weighted(v: Array1<f64>, w: f64) -> Array1<f64> {
    let s = sd(&v);
    if s > 0.0 && w > 0.0 {
        v * (w / s)
    } else {
        Array1::zeros(v.len())
    }
}

pub(crate) fn standardized(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let c = col.to_owned();
        let m = c.mean().unwrap_or(0.0);
        let s = sd(&c);
        let s = if s > 0.0 { s } else { 1.0 };
        col.mapv_inplace(|v| (v - m) / s);
    }
    out
}

const MAX_BISECTION: usize = 100;

/// Builds a semi-synthetic dataset from causes and covariates
/// (`age_col` selects age among the covariates).
pub fn generate(
    causes: ArrayView2<'_, f64>,
    covariates: ArrayView2<'_, f64>,
    age_col: usize,
    cfg: &SynthConfig,
) -> Result<SynthDataset> {
    cfg.validate()?;
    let (n, d) = causes.dim();
    if covariates.nrows() != n || age_col >= covariates.ncols() {
        return Err(Error::Shape("covariates do not match the causes".into()));
    }
    if n < cfg.n_clusters.max(3) {
        return Err(Error::InvalidArgument(format!("too few rows ({n}) for the benchmark")));
    }
    let xs = standardized(causes);
    let fs = standardized(covariates);
    let x_hat = ols_residuals(xs.view(), fs.view(), true)?;

    let scores = pca_top2(xs.view())?;
    let km = kmeans(scores.view(), cfg.n_clusters, rng::derive_seed(cfg.seed, "synth-kmeans", 0))?;
    let u: Array1<f64> = km.labels.iter().map(|&l| l as f64).collect();

    let beta = sparse_normal(d, cfg.effect_scale, cfg.sparse_band, rng::derive_seed(cfg.seed, "synth-beta", 0))?;
    let gamma = cfg.age_coef_scale * rng::std_normal::<f64, _>(&mut rng::substream(cfg.seed, "synth-gamma", 0));
    let mut r = rng::substream(cfg.seed, "synth-sigma", 0);
    let sigma_k: Vec<f64> = (0..cfg.n_clusters)
        .map(|_| 1.0 + 1.0 / rng::gamma::<f64, _>(&mut r, 3.0, 1.0))
        .collect();
    let mut r = rng::substream(cfg.seed, "synth-eps", 0);
    let eps: Array1<f64> = km
        .labels
        .iter()
        .map(|&l| sigma_k[l - 1] * rng::std_normal::<f64, _>(&mut r))
        .collect();

    let lx = x_hat.dot(&Array1::from(beta.clone()));
    let sigma_x = sd(&lx);
    let age = covariates.column(age_col).to_owned();
    let sigma_age = sd(&age);
    let parts = PredictorParts {
        causes: weighted(lx, cfg.nu_x.sqrt()),
        confounder: weighted(u, (0.9 * cfg.nu_z).sqrt()),
        age: if sigma_age > 0.0 {
            age * (gamma * (0.1 * cfg.nu_z).sqrt() / sigma_age)
        } else {
            Array1::zeros(n)
        },
        noise: weighted(eps, cfg.nu_eps().sqrt()),
    };
    let eta = &parts.causes + &parts.confounder + &parts.age + &parts.noise;

    let mut r = rng::substream(cfg.seed, "synth-outcome", 0);
    let unif: Vec<f64> = (0..n).map(|_| rng::uniform::<f64, _>(&mut r)).collect();
    let draw = |b0: f64| -> (Array1<f64>, f64) {
        let y: Array1<f64> = eta
            .iter()
            .zip(&unif)
            .map(|(&e, &u)| (u < sigmoid(b0 + e)) as u8 as f64)
            .collect();
        let frac = y.sum() / n as f64;
        (y, frac)
    };
    // the realized fraction is monotone in β0 for fixed uniforms
    let (mut lo, mut hi) = (-50.0, 50.0);
    let mut found = None;
    let mut last = f64::NAN;
    for _ in 0..MAX_BISECTION {
        let mid = 0.5 * (lo + hi);
        let (y, frac) = draw(mid);
        last = frac;
        if (frac - 0.5).abs() <= 0.02 {
            found = Some((mid, y, frac));
            break;
        }
        if frac > 0.5 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (beta0, y, positive_fraction) = found.ok_or_else(|| {
        Error::Numerical(format!(
            "could not balance the outcome in {MAX_BISECTION} bisection steps (positive fraction {last:.3})"
        ))
    })?;

    let true_effects = if sigma_x > 0.0 {
        beta.iter().map(|b| b * cfg.nu_x.sqrt() / sigma_x).collect()
    } else {
        vec![0.0; d]
    };
    let width = (d.max(1) as f64).log10().floor() as usize + 1;
    let dataset = Dataset::new(DatasetParts {
        causes: xs,
        cause_names: (1..=d).map(|j| format!("x{j:0width$}")).collect(),
        cause_kinds: vec![CauseKind::Thickness; d],
        covariates: covariates.to_owned(),
        covariate_names: (0..covariates.ncols())
            .map(|c| match c {
                c if c == age_col => "age".to_string(),
                1 if age_col == 0 => "gender".to_string(),
                c => format!("f{c}"),
            })
            .collect(),
        age_column: Some(age_col),
        outcome: y,
        outcome_name: "y".into(),
        tiv: None,
        tiv_name: None,
    })?;
    Ok(SynthDataset {
        dataset,
        u: km.labels,
        true_beta: beta,
        true_gamma: gamma,
        sigma_k,
        beta0,
        true_effects,
        parts,
        positive_fraction,
        config: *cfg,
    })
}

/// [`generate`] on surrogate causes of size `n × d`.
pub fn generate_surrogate(n: usize, d: usize, surrogate: &SurrogateConfig, cfg: &SynthConfig) -> Result<SynthDataset> {
    let (x, f) = surrogate_causes(n, d, surrogate, cfg.seed);
    generate(x.view(), f.view(), 0, cfg)
}
