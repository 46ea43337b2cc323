//! Posterior summaries: means and equal-tailed credible intervals.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::BetaRegFit;

/// Fewer draws than this give unreliable 95% tails.
pub const MIN_SUMMARY_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub mean: f64,
    pub lo80: f64,
    pub hi80: f64,
    pub lo95: f64,
    pub hi95: f64,
    /// The 95% interval excludes zero.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub rows: Vec<CoefficientRow>,
    pub n_draws: usize,
}

impl CoefficientSummary {
    pub fn get(&self, name: &str) -> Option<&CoefficientRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,mean,lo80,hi80,lo95,hi95,significant\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.name, r.mean, r.lo80, r.hi80, r.lo95, r.hi95, r.significant
            ));
        }
        out
    }
}

fn interpolate(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Equal-tailed interval at `level` (e.g. 0.95). The upper end is computed
/// from the descending order with the same interpolation weight as the
/// lower end, so negating the draws negates the interval exactly.
pub fn equal_tailed_interval(values: &[f64], level: f64) -> (f64, f64) {
    assert!(!values.is_empty() && level > 0.0 && level < 1.0);
    let mut asc = values.to_vec();
    asc.sort_by(|a, b| a.total_cmp(b));
    let tail = (1.0 - level) / 2.0;
    let lo = interpolate(&asc, tail);
    let pos = tail * (asc.len() - 1) as f64;
    let i = pos.floor() as usize;
    let n = asc.len();
    let j = (i + 1).min(n - 1);
    let frac = pos - i as f64;
    let (a, b) = (asc[n - 1 - i], asc[n - 1 - j]);
    let hi = a + frac * (b - a);
    (lo, hi)
}

/// Mean and 80%/95% intervals for each column of an `S × p` draw matrix.
pub fn summarize_draws<T: Real>(names: &[String], draws: ArrayView2<'_, T>) -> Result<CoefficientSummary> {
    let (s, p) = draws.dim();
    if names.len() != p {
        return Err(Error::Shape(format!("{} names for {p} columns", names.len())));
    }
    if s < MIN_SUMMARY_DRAWS {
        return Err(Error::InvalidArgument(format!(
            "summaries need at least {MIN_SUMMARY_DRAWS} draws, got {s}"
        )));
    }
    let rows = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let v: Vec<f64> = draws.column(j).iter().map(|x| x.to_f64_lossy()).collect();
            let mean = v.iter().sum::<f64>() / s as f64;
            let (lo80, hi80) = equal_tailed_interval(&v, 0.8);
            let (lo95, hi95) = equal_tailed_interval(&v, 0.95);
            CoefficientRow {
                name: name.clone(),
                mean,
                lo80,
                hi80,
                lo95,
                hi95,
                significant: lo95 > 0.0 || hi95 < 0.0,
            }
        })
        .collect();
    Ok(CoefficientSummary { rows, n_draws: s })
}

/// Summaries of the intercept, slopes and precision of a Beta regression.
pub fn summarize_coefficients<T: Real>(fit: &BetaRegFit<T>) -> Result<CoefficientSummary> {
    summarize_draws(&fit.names, fit.draws.view())
}
