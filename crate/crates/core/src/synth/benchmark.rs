//! RMSE comparison of five effect estimators across confounding strengths.
//!
//! Every simulation fits a logistic regression of the outcome on
//!
//! | arm        | design                                             |
//! |------------|----------------------------------------------------|
//! | Non-causal | standardized causes                                |
//! | ROA        | causes with age regressed out (OLS)                |
//! | PPCA, BPMF | causes residualized on the substitute, plus age    |
//! | Oracle     | causes, age and the true cluster confounder `u`    |
//!
//! and scores the per-cause coefficients against the true effects by
//! `100 · RMSE`. Substitute arms whose posterior predictive check fails are
//! excluded and counted.
//!
//! Seeds: simulation `s` of grid cell `c` uses
//! `derive_seed(seed, "benchmark-sim", c · n_sims + s)` as its own master
//! seed; the generator, the holdout split, both factor models and both
//! checks derive their streams from it.

use ndarray::{concatenate, s, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{generate_surrogate, SurrogateConfig, SynthConfig, SynthDataset};
use crate::data::split_holdout_matrix;
use crate::error::{Error, Result};
use crate::linalg::ols_residuals;
use crate::outcome::{fit_logistic, residualize};
use crate::plfm::{extract_substitute, fit_gibbs, ChainSettings, PlfmKind, PlfmSpec};
use crate::ppc::{bayesian_p_values, PpcOptions};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    NonCausal,
    Roa,
    Ppca,
    Bpmf,
    Oracle,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::NonCausal, Arm::Roa, Arm::Ppca, Arm::Bpmf, Arm::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::NonCausal => "non_causal",
            Arm::Roa => "roa",
            Arm::Ppca => "ppca",
            Arm::Bpmf => "bpmf",
            Arm::Oracle => "oracle",
        }
    }
}

/// The 15 cause:confounder variance ratios, strongest cause signal first.
pub fn table1_grid() -> Vec<[f64; 2]> {
    [
        (10, 1), (5, 1), (4, 1), (3, 1), (5, 2), (5, 3), (3, 2), (1, 1),
        (2, 3), (3, 5), (2, 5), (1, 3), (1, 4), (1, 5), (1, 10),
    ]
    .iter()
    .map(|&(a, b)| [a as f64, b as f64])
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    /// `ν_x : ν_z` ratios, one table row each.
    pub grid: Vec<[f64; 2]>,
    pub nu_eps: f64,
    pub n_sims: usize,
    pub n: usize,
    pub d: usize,
    pub k_fit: usize,
    pub seed: u64,
    pub surrogate: SurrogateConfig,
    pub chain: ChainSettings,
    pub hold_fraction: f64,
    pub ppc: PpcOptions,
    /// Ridge penalty of the logistic fits (0: plain maximum likelihood).
    pub l2: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            grid: table1_grid(),
            nu_eps: 0.1,
            n_sims: 50,
            n: 2000,
            d: 19,
            k_fit: 5,
            seed: 0,
            surrogate: SurrogateConfig::default(),
            chain: ChainSettings {
                n_warmup: 200,
                n_samples: 100,
                thin: 1,
            },
            hold_fraction: 0.2,
            ppc: PpcOptions {
                n_replicates: 100,
                tau: 0.1,
                seed: 0,
                max_statistic_draws: Some(20),
            },
            l2: 0.0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.n_sims == 0 {
            return Err(Error::InvalidArgument("benchmark needs a grid and n_sims >= 1".into()));
        }
        if self.d < 2 || self.k_fit == 0 || self.k_fit >= self.d {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= k_fit < d, got k_fit = {} and d = {}",
                self.k_fit, self.d
            )));
        }
        for r in &self.grid {
            SynthConfig::from_ratio(r[0], r[1], self.nu_eps)?;
        }
        Ok(())
    }

    fn synth_config(&self, cell: usize, seed: u64) -> Result<SynthConfig> {
        let r = self.grid[cell];
        Ok(SynthConfig {
            k_fit: self.k_fit,
            seed,
            ..SynthConfig::from_ratio(r[0], r[1], self.nu_eps)?
        })
    }
}

fn ratio_label(r: [f64; 2]) -> String {
    format!("{}/{}", r[0], r[1])
}

/// One simulation of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub cell: usize,
    pub sim: usize,
    pub seed: u64,
    /// `100 · RMSE` per arm in [`Arm::ALL`] order; `None` when the arm was
    /// excluded.
    pub rmse: [Option<f64>; 5],
    /// Mean Bayesian p-value of the PPCA and BPMF fits.
    pub ppc_mean_p: [Option<f64>; 2],
    /// Why an arm produced no estimate.
    pub excluded: Vec<(Arm, String)>,
    pub positive_fraction: f64,
}

fn rmse100(est: &[f64], truth: &[f64]) -> f64 {
    let ss: f64 = est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    100.0 * (ss / truth.len() as f64).sqrt()
}

fn logistic_effects(design: &Array2<f64>, y: ndarray::ArrayView1<'_, f64>, d: usize, l2: f64) -> Result<Vec<f64>> {
    let fit = fit_logistic(design.view(), y, l2)?;
    Ok(fit.slopes().slice(s![..d]).to_vec())
}

fn substitute_arm(
    cfg: &BenchmarkConfig,
    sd: &SynthDataset,
    kind: PlfmKind,
    sim_seed: u64,
) -> Result<(std::result::Result<Vec<f64>, String>, Option<f64>)> {
    let ds = &sd.dataset;
    let x = ds.causes();
    let f = super::standardized(ds.covariates());
    let (obs, hold, _) = split_holdout_matrix(x, cfg.hold_fraction, derive_seed(sim_seed, "benchmark-holdout", 0))?;
    let tag = kind as u64;
    let spec = PlfmSpec::new(kind, cfg.k_fit, derive_seed(sim_seed, "benchmark-plfm", tag));
    let draws = match fit_gibbs(&obs, f.view(), &spec, cfg.chain) {
        Ok(d) => d,
        Err(e) => return Ok((Err(format!("fit failed: {e}")), None)),
    };
    let opts = PpcOptions {
        seed: derive_seed(sim_seed, "benchmark-ppc", tag),
        ..cfg.ppc
    };
    let report = bayesian_p_values(&draws, &obs, &hold, f.view(), &opts)?;
    if !report.passed {
        return Ok((
            Err(format!("posterior predictive check failed (mean p {:.3})", report.mean_p)),
            Some(report.mean_p),
        ));
    }
    let zh = extract_substitute(&draws)?;
    let r = residualize(x, f.view(), &draws, &zh)?;
    let age = ds.age().expect("synthetic data have age").insert_axis(Axis(1));
    let design = concatenate(Axis(1), &[r.view(), age]).expect("same rows");
    let est = logistic_effects(&design, ds.outcome(), ds.n_causes(), cfg.l2).map_err(|e| e.to_string());
    Ok((est, Some(report.mean_p)))
}

/// Runs simulation `sim` of grid cell `cell`.
pub fn simulate_once(cfg: &BenchmarkConfig, cell: usize, sim: usize) -> Result<SimulationRecord> {
    let seed = derive_seed(cfg.seed, "benchmark-sim", (cell * cfg.n_sims + sim) as u64);
    let sc = cfg.synth_config(cell, seed)?;
    let sd = generate_surrogate(cfg.n, cfg.d, &cfg.surrogate, &sc)?;
    let ds = &sd.dataset;
    let (x, y, d) = (ds.causes(), ds.outcome(), ds.n_causes());
    let age = ds.age().expect("synthetic data have age").insert_axis(Axis(1));
    let truth = &sd.true_effects;

    let mut rmse = [None; 5];
    let mut excluded = Vec::new();
    let mut ppc_mean_p = [None; 2];
    let mut record = |arm: Arm, est: std::result::Result<Vec<f64>, String>, rmse: &mut [Option<f64>; 5]| match est {
        Ok(b) => rmse[arm as usize] = Some(rmse100(&b, truth)),
        Err(why) => excluded.push((arm, why)),
    };

    let nc = logistic_effects(&x.to_owned(), y, d, cfg.l2).map_err(|e| e.to_string());
    record(Arm::NonCausal, nc, &mut rmse);
    let roa_x = ols_residuals(x, age, true)?;
    let roa = logistic_effects(&roa_x, y, d, cfg.l2).map_err(|e| e.to_string());
    record(Arm::Roa, roa, &mut rmse);
    for (slot, (arm, kind)) in [(Arm::Ppca, PlfmKind::Ppca), (Arm::Bpmf, PlfmKind::Bpmf)].into_iter().enumerate() {
        let (est, p) = substitute_arm(cfg, &sd, kind, seed)?;
        ppc_mean_p[slot] = p;
        record(arm, est, &mut rmse);
    }
    let u = ndarray::Array1::from_iter(sd.u.iter().map(|&l| l as f64)).insert_axis(Axis(1));
    let oracle_x = concatenate(Axis(1), &[x, age, u.view()]).expect("same rows");
    let oracle = logistic_effects(&oracle_x, y, d, cfg.l2).map_err(|e| e.to_string());
    record(Arm::Oracle, oracle, &mut rmse);

    Ok(SimulationRecord {
        cell,
        sim,
        seed,
        rmse,
        ppc_mean_p,
        excluded,
        positive_fraction: sd.positive_fraction,
    })
}

/// One line of the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub ratio: String,
    pub nu_x: f64,
    pub nu_z: f64,
    /// Mean `100 · RMSE` per arm over the simulations where the arm ran.
    pub mean: [Option<f64>; 5],
    pub n_used: [usize; 5],
    /// Non-causal minus ROA, PPCA, BPMF.
    pub delta: [Option<f64>; 3],
    /// Oracle ≤ min(PPCA, BPMF) < ROA < Non-causal on the cell means.
    pub ordering_holds: bool,
    /// Share of simulations in which Oracle is best and Non-causal worst.
    pub per_sim_ordering: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    /// Two-sided, from the t approximation with `n - 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(Error::InvalidArgument("spearman needs two equal-length samples of size >= 3".into()));
    }
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    let rho = if sxx > 0.0 && syy > 0.0 { sxy / (sxx * syy).sqrt() } else { 0.0 };
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(Spearman { rho, p_value, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub rows: Vec<BenchmarkRow>,
    pub records: Vec<SimulationRecord>,
    /// Rank correlation of ΔROA with the grid position.
    pub delta_roa_trend: Option<Spearman>,
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"))
}

impl BenchmarkReport {
    /// `ratio,non_causal,roa,ppca,bpmf,oracle,delta_roa,delta_ppca,delta_bpmf,excluded_ppca,excluded_bpmf`
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "ratio,non_causal,roa,ppca,bpmf,oracle,delta_roa,delta_ppca,delta_bpmf,excluded_ppca,excluded_bpmf\n",
        );
        for r in &self.rows {
            let n = self.config.n_sims;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.ratio,
                fmt(r.mean[0]),
                fmt(r.mean[1]),
                fmt(r.mean[2]),
                fmt(r.mean[3]),
                fmt(r.mean[4]),
                fmt(r.delta[0]),
                fmt(r.delta[1]),
                fmt(r.delta[2]),
                n - r.n_used[Arm::Ppca as usize],
                n - r.n_used[Arm::Bpmf as usize],
            ));
        }
        out
    }

    pub fn n_excluded(&self, arm: Arm) -> usize {
        self.records.iter().filter(|r| r.rmse[arm as usize].is_none()).count()
    }
}

fn summarize_cell(cfg: &BenchmarkConfig, cell: usize, recs: &[SimulationRecord]) -> BenchmarkRow {
    let mut mean = [None; 5];
    let mut n_used = [0; 5];
    for arm in Arm::ALL {
        let v: Vec<f64> = recs.iter().filter_map(|r| r.rmse[arm as usize]).collect();
        n_used[arm as usize] = v.len();
        if !v.is_empty() {
            mean[arm as usize] = Some(v.iter().sum::<f64>() / v.len() as f64);
        }
    }
    let nc = mean[Arm::NonCausal as usize];
    let delta = [Arm::Roa, Arm::Ppca, Arm::Bpmf].map(|a| Some(nc? - mean[a as usize]?));
    let ordering_holds = match (
        nc,
        mean[Arm::Roa as usize],
        mean[Arm::Ppca as usize],
        mean[Arm::Bpmf as usize],
        mean[Arm::Oracle as usize],
    ) {
        (Some(nc), Some(roa), p, b, Some(or)) => {
            let best_sub = [p, b].into_iter().flatten().fold(f64::INFINITY, f64::min);
            best_sub.is_finite() && or <= best_sub && best_sub < roa && roa < nc
        }
        _ => false,
    };
    let per_sim = recs
        .iter()
        .filter(|r| {
            let v: Vec<f64> = r.rmse.iter().flatten().copied().collect();
            match (r.rmse[Arm::Oracle as usize], r.rmse[Arm::NonCausal as usize]) {
                (Some(o), Some(n)) => v.iter().all(|&x| o <= x && x <= n),
                _ => false,
            }
        })
        .count() as f64
        / recs.len().max(1) as f64;
    let sc = cfg.synth_config(cell, 0).expect("validated");
    BenchmarkRow {
        ratio: ratio_label(cfg.grid[cell]),
        nu_x: sc.nu_x,
        nu_z: sc.nu_z,
        mean,
        n_used,
        delta,
        ordering_holds,
        per_sim_ordering: per_sim,
    }
}

/// Runs every simulation of every grid cell (in parallel on the current
/// rayon pool) and reduces them to the table.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.grid.len())
        .flat_map(|c| (0..cfg.n_sims).map(move |s| (c, s)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(c, s)| {
            let r = simulate_once(cfg, c, s);
            if let Ok(rec) = &r {
                log::info!("cell {} sim {} rmse {:?}", ratio_label(cfg.grid[c]), s, rec.rmse);
            }
            r
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<BenchmarkRow> = (0..cfg.grid.len())
        .map(|c| summarize_cell(cfg, c, &records[c * cfg.n_sims..(c + 1) * cfg.n_sims]))
        .collect();
    let deltas: Vec<(f64, f64)> = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.delta[0].map(|d| (i as f64, d)))
        .collect();
    let delta_roa_trend = if deltas.len() >= 3 {
        let (x, y): (Vec<f64>, Vec<f64>) = deltas.into_iter().unzip();
        Some(spearman(&x, &y)?)
    } else {
        None
    };
    Ok(BenchmarkReport {
        config: cfg.clone(),
        rows,
        records,
        delta_roa_trend,
    })
}
