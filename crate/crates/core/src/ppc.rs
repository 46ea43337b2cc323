//! Posterior predictive checks on held-out cells.
//!
//! The test statistic of row `i` is the expected negative log-likelihood of
//! its held-out cells, `T(x_i) = mean_θ [-log p(x_i^H | θ)]`, with `z_i`
//! integrated out under its prior. For each row, `M` replicates of the
//! held-out cells are drawn from the posterior predictive distribution given
//! `x_i^obs` and
//!
//! ```text
//! p_Bi = (1/M) Σ_m 1[T(x_i,m^sim) ≥ T(x_i^holdout)]
//! ```
//!
//! Ties count as exceedances. Rows without held-out cells are excluded.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{MaskedMatrix, MaskedRow};
use crate::error::{Error, Result};
use crate::plfm::{marginal_row_factor, row_log_likelihood, MarginalFactor, PosteriorDraws};
use crate::plfm::predictive_internal::{replicate_draw, sample_z_cached, PriorCache};
use crate::rng;
use crate::scalar::Real;

/// Smallest replicate count accepted; the p-value resolution is `1/M`.
pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpcOptions {
    /// Replicates per row (`M`).
    pub n_replicates: usize,
    /// Gate threshold τ; the check passes when `mean_p > tau`.
    pub tau: f64,
    pub seed: u64,
    /// Evaluate `T` on at most this many evenly spaced draws instead of all
    /// of them. Replicates still cycle over every draw.
    pub max_statistic_draws: Option<usize>,
}

impl Default for PpcOptions {
    fn default() -> Self {
        PpcOptions {
            n_replicates: 200,
            tau: 0.1,
            seed: 0,
            max_statistic_draws: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    /// `p_Bi` per row; `None` for rows without held-out cells.
    pub p_values: Vec<Option<f64>>,
    pub n_holdout: Vec<usize>,
    pub mean_p: f64,
    pub tau: f64,
    pub passed: bool,
    pub n_replicates: usize,
    pub n_scored: usize,
    pub n_excluded: usize,
}

impl PpcReport {
    /// Rows without held-out cells (0-based).
    pub fn excluded_rows(&self) -> Vec<usize> {
        self.p_values
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.is_none().then_some(i))
            .collect()
    }

    /// One line per row: `row,n_holdout,p_value` (empty p-value when
    /// excluded), rows numbered from 1.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("row,n_holdout,p_value\n");
        for (i, (p, h)) in self.p_values.iter().zip(&self.n_holdout).enumerate() {
            match p {
                Some(p) => out.push_str(&format!("{},{},{}\n", i + 1, h, p)),
                None => out.push_str(&format!("{},{},\n", i + 1, h)),
            }
        }
        out
    }
}

/// `T(x_i)`: mean over draws of `-log p(x_i^obs | θ)`.
pub fn test_statistic<T: Real>(
    draws: &PosteriorDraws<T>,
    x_row: MaskedRow<'_, T>,
    f_row: ndarray::ArrayView1<'_, T>,
) -> Result<T> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no posterior draws".into()));
    }
    let mut acc = T::zero();
    for d in &draws.draws {
        acc -= row_log_likelihood(d, x_row, f_row)?;
    }
    Ok(acc / T::of_usize(draws.len()))
}

fn statistic_draws(n_draws: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m >= 1 && m < n_draws => (0..m).map(|l| l * n_draws / m).collect(),
        _ => (0..n_draws).collect(),
    }
}

fn mean_neg_log_density<T: Real>(factors: &[MarginalFactor<T>], values: &[T], buf: &mut Vec<T>) -> T {
    let mut acc = T::zero();
    for f in factors {
        acc -= f.log_density(values, buf);
    }
    acc / T::of_usize(factors.len())
}

/// Bayesian p-values of the held-out cells.
///
/// `x_obs` and `x_holdout` are the two halves of one holdout split. Row `i`
/// draws from the stream `derive_seed(seed, "ppc-row", i)`, so results do
/// not depend on the thread count or on row scheduling.
pub fn bayesian_p_values<T: Real>(
    draws: &PosteriorDraws<T>,
    x_obs: &MaskedMatrix<T>,
    x_holdout: &MaskedMatrix<T>,
    f: ArrayView2<'_, T>,
    opts: &PpcOptions,
) -> Result<PpcReport> {
    if opts.n_replicates < MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!(
            "posterior predictive check needs at least {MIN_REPLICATES} replicates, got {}",
            opts.n_replicates
        )));
    }
    if !(opts.tau >= 0.0 && opts.tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in [0, 1), got {}", opts.tau)));
    }
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no posterior draws".into()));
    }
    let (n, d) = (x_obs.nrows(), x_obs.ncols());
    if x_holdout.values().dim() != (n, d) || d != draws.n_causes() || n != draws.n_rows() {
        return Err(Error::Shape("holdout split does not match the fitted model".into()));
    }
    if f.nrows() != n || f.ncols() != draws.n_covariates() {
        return Err(Error::Shape("covariates do not match the fitted model".into()));
    }
    let caches = draws
        .draws
        .iter()
        .map(PriorCache::new)
        .collect::<Result<Vec<_>>>()?;
    let stat_set = statistic_draws(draws.len(), opts.max_statistic_draws);
    let m_reps = opts.n_replicates;
    let per_row: Vec<(Option<f64>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(Option<f64>, usize)> {
            let held = x_holdout.row(i).observed_indices();
            if held.is_empty() {
                return Ok((None, 0));
            }
            let f_row = f.row(i);
            let factors = stat_set
                .iter()
                .map(|&s| marginal_row_factor(&draws.draws[s], &held, f_row))
                .collect::<Result<Vec<_>>>()?;
            let mut buf = Vec::with_capacity(held.len());
            let observed: Vec<T> = held.iter().map(|&j| x_holdout.values()[[i, j]]).collect();
            let t_obs = mean_neg_log_density(&factors, &observed, &mut buf);
            let mut rng = rng::substream(opts.seed, "ppc-row", i as u64);
            let mut sim = vec![T::zero(); held.len()];
            let mut exceed = 0usize;
            for m in 0..m_reps {
                let s = replicate_draw(m, m_reps, draws.len());
                let draw = &draws.draws[s];
                let z = sample_z_cached(draw, &caches[s], x_obs.row(i), f_row, &mut rng)?;
                let sd = draw.sigma2.sqrt();
                for (slot, &j) in sim.iter_mut().zip(&held) {
                    let mut mean = T::zero();
                    for r in 0..draw.latent_dim() {
                        mean += draw.w[[j, r]] * z[r];
                    }
                    for c in 0..draw.n_covariates() {
                        mean += draw.a[[j, c]] * f_row[c];
                    }
                    *slot = mean + sd * rng::std_normal::<T, _>(&mut rng);
                }
                if mean_neg_log_density(&factors, &sim, &mut buf) >= t_obs {
                    exceed += 1;
                }
            }
            Ok((Some(exceed as f64 / m_reps as f64), held.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (p_values, n_holdout): (Vec<_>, Vec<_>) = per_row.into_iter().unzip();
    let scored: Vec<f64> = p_values.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::InvalidArgument("no row has held-out cells".into()));
    }
    let mean_p = scored.iter().sum::<f64>() / scored.len() as f64;
    Ok(PpcReport {
        n_scored: scored.len(),
        n_excluded: n - scored.len(),
        p_values,
        n_holdout,
        mean_p,
        tau: opts.tau,
        passed: mean_p > opts.tau,
        n_replicates: m_reps,
    })
}
