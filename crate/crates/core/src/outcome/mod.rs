//! Outcome models over causes residualized against the factor model.
//!
//! `r(x_i, f_i) = x_i - E[X | ẑ_i, f_i]`; the regression design is
//! `[r(x_i, f_i), age_i]` (plus any opt-in covariates).

mod beta;
mod logistic;
mod summary;

pub use beta::{
    beta_log_likelihood, beta_log_posterior, fit_beta_regression, BetaMcmcConfig, BetaPrior,
    BetaRegFit,
};
pub use logistic::{fit_logistic, LogisticFit};
pub use summary::{equal_tailed_interval, summarize_coefficients, summarize_draws, CoefficientRow,
    CoefficientSummary, MIN_SUMMARY_DRAWS};

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::plfm::{PlfmKind, PosteriorDraws, SubstituteConfounder};
use crate::scalar::Real;

/// Which fit a design was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: PlfmKind,
    pub seed: u64,
    pub n_draws: usize,
    pub n_rows: usize,
}

/// Residualized causes plus the covariates kept in the outcome regression.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualizedDesign<T> {
    /// `N × D` residuals `x - E[X | ẑ, f]`.
    pub residuals: Array2<T>,
    /// `N × D` reconstruction `E[X | ẑ_i, f_i]`, reused under interventions.
    pub reconstruction: Array2<T>,
    /// `N × E` covariates entering the regression directly (age first).
    pub extra: Array2<T>,
    pub cause_names: Vec<String>,
    pub extra_names: Vec<String>,
    pub provenance: Provenance,
}

impl<T: Real> ResidualizedDesign<T> {
    pub fn n_rows(&self) -> usize {
        self.residuals.nrows()
    }

    /// `[residuals | extra]`, the matrix the outcome model regresses on.
    pub fn matrix(&self) -> Array2<T> {
        concatenate(Axis(1), &[self.residuals.view(), self.extra.view()]).expect("same rows")
    }

    /// Design matrix for a modified cause matrix: `[x̃ - reconstruction | extra]`.
    pub fn matrix_for(&self, x_tilde: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x_tilde.dim() != self.reconstruction.dim() {
            return Err(Error::Shape("intervened matrix does not match the design".into()));
        }
        let r = &x_tilde - &self.reconstruction;
        Ok(concatenate(Axis(1), &[r.view(), self.extra.view()]).expect("same rows"))
    }

    pub fn column_names(&self) -> Vec<String> {
        self.cause_names
            .iter()
            .chain(&self.extra_names)
            .cloned()
            .collect()
    }
}

/// `E[X | ẑ_i, f_i]` for every row: `Ẑ W̄ᵀ + F Āᵀ`, the draw-averaged
/// reconstruction (the model is linear, so averaging the loadings first is
/// exact).
pub fn reconstruction<T: Real>(
    draws: &PosteriorDraws<T>,
    z_hat: &SubstituteConfounder<T>,
    f: ArrayView2<'_, T>,
) -> Result<Array2<T>> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no posterior draws".into()));
    }
    let n = z_hat.z_hat.nrows();
    if z_hat.z_hat.ncols() != draws.latent_dim() || n != draws.n_rows() {
        return Err(Error::Shape(format!(
            "substitute confounder is {}x{}, fit has {} rows and K = {}",
            n,
            z_hat.z_hat.ncols(),
            draws.n_rows(),
            draws.latent_dim()
        )));
    }
    if f.nrows() != n || f.ncols() != draws.n_covariates() {
        return Err(Error::Shape("covariates do not match the fit".into()));
    }
    let mut rec = z_hat.z_hat.dot(&draws.mean_w().t());
    if f.ncols() > 0 {
        rec += &f.dot(&draws.mean_a().t());
    }
    Ok(rec)
}

/// Residuals `x - E[X | ẑ, f]`. Pure in `(x, ẑ, f, draws)`.
pub fn residualize<T: Real>(
    x: ArrayView2<'_, T>,
    f: ArrayView2<'_, T>,
    draws: &PosteriorDraws<T>,
    z_hat: &SubstituteConfounder<T>,
) -> Result<Array2<T>> {
    let rec = reconstruction(draws, z_hat, f)?;
    if x.dim() != rec.dim() {
        return Err(Error::Shape(format!(
            "cause matrix is {:?}, reconstruction is {:?}",
            x.dim(),
            rec.dim()
        )));
    }
    Ok(&x - &rec)
}

/// Builds the outcome design from a (standardized) dataset: residualized
/// causes, age (when the dataset has an `age` column) and the named extra
/// covariates.
pub fn residualize_dataset<T: Real>(
    ds: &Dataset<T>,
    draws: &PosteriorDraws<T>,
    z_hat: &SubstituteConfounder<T>,
    extra_covariates: &[String],
) -> Result<ResidualizedDesign<T>> {
    let rec = reconstruction(draws, z_hat, ds.covariates())?;
    if rec.dim() != ds.causes().dim() {
        return Err(Error::Shape("fit does not match the dataset".into()));
    }
    let residuals = &ds.causes() - &rec;
    let covs = ds.covariates();
    let mut cols: Vec<ArrayView1<'_, T>> = Vec::new();
    let mut extra_names = Vec::new();
    if let Some(a) = ds.age_column() {
        cols.push(covs.column(a));
        extra_names.push(ds.covariate_names()[a].clone());
    }
    for name in extra_covariates {
        if extra_names.contains(name) {
            continue;
        }
        let j = ds
            .covariate_index(name)
            .ok_or_else(|| Error::MissingColumn(name.clone()))?;
        cols.push(covs.column(j));
        extra_names.push(name.clone());
    }
    let mut extra = Array2::zeros((ds.n_rows(), cols.len()));
    for (c, col) in cols.iter().enumerate() {
        extra.column_mut(c).assign(col);
    }
    Ok(ResidualizedDesign {
        residuals,
        reconstruction: rec,
        extra,
        cause_names: ds.cause_names().to_vec(),
        extra_names,
        provenance: Provenance {
            kind: draws.kind(),
            seed: draws.spec.seed,
            n_draws: draws.len(),
            n_rows: draws.n_rows(),
        },
    })
}

/// `y = (adas + 0.5) / (max_score + 1)`, strictly inside (0, 1).
pub fn scale_outcome<T: Real>(adas: ArrayView1<'_, T>, max_score: T) -> Result<Array1<T>> {
    if !(max_score > T::zero()) {
        return Err(Error::InvalidArgument("max_score must be positive".into()));
    }
    if let Some((i, v)) = adas
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v >= T::zero() && v <= max_score))
    {
        return Err(Error::InvalidArgument(format!(
            "outcome value {v} in row {} is outside [0, {max_score}]",
            i + 1
        )));
    }
    let half = T::lit(0.5);
    Ok(adas.mapv(|v| (v + half) / (max_score + T::one())))
}

/// Inverse of [`scale_outcome`].
pub fn unscale_outcome<T: Real>(y: ArrayView1<'_, T>, max_score: T) -> Array1<T> {
    let half = T::lit(0.5);
    y.mapv(|v| v * (max_score + T::one()) - half)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scale_boundaries_and_inverse() {
        let adas: Array1<f64> = array![0.0, 85.0, 17.25];
        let y = scale_outcome(adas.view(), 85.0).unwrap();
        assert!((y[0] - 0.5 / 86.0).abs() < 1e-15);
        assert!((y[0] - 0.005814).abs() < 1e-6);
        assert!((y[1] - 0.994186).abs() < 1e-6);
        let back = unscale_outcome(y.view(), 85.0);
        for (a, b) in back.iter().zip(adas.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(scale_outcome(array![86.0f64].view(), 85.0).is_err());
        assert!(scale_outcome(array![-0.1f64].view(), 85.0).is_err());
    }
}
