//! Average causal effects of interventions on a subset of causes.
//!
//! Under `do(X_S = x′_S)` each row keeps its other causes, its covariates and
//! its substitute confounder `ẑ_i`; only the residual of the intervened
//! matrix changes. For each outcome draw `s`,
//!
//! ```text
//! ACE_s = (1/N) Σ_i logit⁻¹(β0_s + [x̃_i - E[X | ẑ_i, f_i], age_i] · β_s)
//! ```
//!
//! and the draws `ACE_s` form the posterior of the effect.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardization};
use crate::error::{Error, Result};
use crate::outcome::{equal_tailed_interval, BetaRegFit, ResidualizedDesign};
use crate::ppc::PpcReport;
use crate::scalar::Real;
use crate::special::sigmoid;

/// Sets the causes in `columns` to `values` for every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub columns: Vec<usize>,
    /// Standardized cause units.
    pub values: Vec<f64>,
}

impl Intervention {
    pub fn new(columns: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidArgument("an intervention needs at least one cause".into()));
        }
        if columns.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} columns but {} values",
                columns.len(),
                values.len()
            )));
        }
        let mut sorted = columns.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("intervention sets a cause twice".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("intervention value {v} is not finite")));
        }
        Ok(Intervention { columns, values })
    }

    /// Builds an intervention from `(cause name, value)` pairs.
    pub fn by_name<T: Real>(ds: &Dataset<T>, pairs: &[(String, f64)]) -> Result<Self> {
        let mut cols = Vec::with_capacity(pairs.len());
        let mut vals = Vec::with_capacity(pairs.len());
        for (name, v) in pairs {
            let j = ds.cause_index(name).ok_or_else(|| {
                Error::InvalidArgument(format!("`{name}` is not a cause column"))
            })?;
            cols.push(j);
            vals.push(*v);
        }
        Intervention::new(cols, vals)
    }

    /// Parses `column=value`.
    pub fn parse_assignment(s: &str) -> Result<(String, f64)> {
        let (name, value) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected column=value, got `{s}`")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("`{value}` is not a number")))?;
        Ok((name.trim().to_string(), v))
    }

    /// Converts values given in raw cause units to standardized units.
    pub fn from_raw<T: Real>(&self, st: &Standardization<T>) -> Intervention {
        let values = self
            .columns
            .iter()
            .zip(&self.values)
            .map(|(&j, &v)| st.cause_to_standard(j, T::lit(v)).to_f64_lossy())
            .collect();
        Intervention {
            columns: self.columns.clone(),
            values,
        }
    }
}

/// `x̃`: a copy of the causes with the intervened columns overwritten.
pub fn apply_intervention<T: Real>(x: ArrayView2<'_, T>, iv: &Intervention) -> Result<Array2<T>> {
    let d = x.ncols();
    if let Some(&j) = iv.columns.iter().find(|&&j| j >= d) {
        return Err(Error::InvalidArgument(format!(
            "intervention column {j} is out of range for {d} causes"
        )));
    }
    let mut out = x.to_owned();
    for (&j, &v) in iv.columns.iter().zip(&iv.values) {
        out.column_mut(j).fill(T::lit(v));
    }
    Ok(out)
}

/// Outcome of the posterior predictive check as seen by the effect
/// estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateStatus {
    pub mean_p: Option<f64>,
    pub tau: f64,
    pub passed: bool,
    pub overridden: bool,
}

impl GateStatus {
    pub fn from_report(report: &PpcReport) -> Self {
        GateStatus {
            mean_p: Some(report.mean_p),
            tau: report.tau,
            passed: report.passed,
            overridden: false,
        }
    }

    /// Proceed regardless of the check (or without one).
    pub fn overridden(report: Option<&PpcReport>) -> Self {
        GateStatus {
            mean_p: report.map(|r| r.mean_p),
            tau: report.map_or(f64::NAN, |r| r.tau),
            passed: report.is_some_and(|r| r.passed),
            overridden: true,
        }
    }

    pub fn enforce(&self) -> Result<()> {
        if self.passed || self.overridden {
            return Ok(());
        }
        match self.mean_p {
            Some(mean_p) => Err(Error::GateFailed {
                mean_p,
                tau: self.tau,
            }),
            None => Err(Error::GateMissing),
        }
    }
}

/// Posterior summary of an average causal effect (or a contrast of two).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AceEstimate {
    pub point: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub n_individuals: usize,
    pub n_draws: usize,
    pub gate: GateStatus,
    /// One value per outcome draw.
    #[serde(skip)]
    pub draws: Vec<f64>,
}

impl AceEstimate {
    fn from_draws(draws: Vec<f64>, n_individuals: usize, gate: GateStatus) -> Self {
        let point = draws.iter().sum::<f64>() / draws.len() as f64;
        let (lo95, hi95) = equal_tailed_interval(&draws, 0.95);
        AceEstimate {
            point,
            lo95,
            hi95,
            n_individuals,
            n_draws: draws.len(),
            gate,
            draws,
        }
    }
}

/// Mean predicted outcome over rows of `design` for every coefficient draw.
/// `coefs` is `S × (1 + p)` with the intercept first.
pub fn mean_prediction_per_draw<T: Real>(design: ArrayView2<'_, T>, coefs: ArrayView2<'_, T>) -> Result<Vec<f64>> {
    let p = design.ncols();
    if coefs.ncols() != p + 1 {
        return Err(Error::Shape(format!(
            "{} coefficients per draw for a {p}-column design",
            coefs.ncols()
        )));
    }
    if coefs.nrows() == 0 || design.nrows() == 0 {
        return Err(Error::InvalidArgument("no draws or no rows".into()));
    }
    let n = T::of_usize(design.nrows());
    Ok((0..coefs.nrows())
        .into_par_iter()
        .map(|s| {
            let c = coefs.row(s);
            let b = c.slice(ndarray::s![1..]);
            let mut acc = T::zero();
            for row in design.rows() {
                acc += sigmoid(c[0] + row.dot(&b));
            }
            (acc / n).to_f64_lossy()
        })
        .collect())
}

/// Per-draw ACE for an already-intervened cause matrix `x_tilde`.
pub fn average_causal_effect_on<T: Real>(
    design: &ResidualizedDesign<T>,
    fit: &BetaRegFit<T>,
    x_tilde: ArrayView2<'_, T>,
) -> Result<Vec<f64>> {
    let m = design.matrix_for(x_tilde)?;
    mean_prediction_per_draw(m.view(), fit.coefficient_draws())
}

/// Per-draw mean in-sample prediction, the ACE of the identity intervention.
pub fn mean_in_sample_prediction<T: Real>(design: &ResidualizedDesign<T>, fit: &BetaRegFit<T>) -> Result<Vec<f64>> {
    mean_prediction_per_draw(design.matrix().view(), fit.coefficient_draws())
}

fn check_pair<T: Real>(ds: &Dataset<T>, design: &ResidualizedDesign<T>) -> Result<()> {
    if ds.causes().dim() != design.residuals.dim() {
        return Err(Error::Shape("design was built from a different dataset".into()));
    }
    Ok(())
}

/// `E[Y | do(X_S = x′_S)]`. Refuses to run unless the gate passed or was
/// overridden.
pub fn average_causal_effect<T: Real>(
    ds: &Dataset<T>,
    design: &ResidualizedDesign<T>,
    fit: &BetaRegFit<T>,
    iv: &Intervention,
    gate: GateStatus,
) -> Result<AceEstimate> {
    gate.enforce()?;
    check_pair(ds, design)?;
    let x_tilde = apply_intervention(ds.causes(), iv)?;
    let draws = average_causal_effect_on(design, fit, x_tilde.view())?;
    Ok(AceEstimate::from_draws(draws, ds.n_rows(), gate))
}

/// `ACE(a) - ACE(b)`, paired on outcome draws.
pub fn ace_contrast<T: Real>(
    ds: &Dataset<T>,
    design: &ResidualizedDesign<T>,
    fit: &BetaRegFit<T>,
    iv_a: &Intervention,
    iv_b: &Intervention,
    gate: GateStatus,
) -> Result<AceEstimate> {
    gate.enforce()?;
    check_pair(ds, design)?;
    let xa = apply_intervention(ds.causes(), iv_a)?;
    let xb = apply_intervention(ds.causes(), iv_b)?;
    let a = average_causal_effect_on(design, fit, xa.view())?;
    let b = average_causal_effect_on(design, fit, xb.view())?;
    let diff = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    Ok(AceEstimate::from_draws(diff, ds.n_rows(), gate))
}
