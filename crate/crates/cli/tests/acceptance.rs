//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs at the full desk scale by default (the benchmark alone takes about
//! 45 minutes on one core). `ACCEPTANCE_QUICK=1` shrinks the three
//! simulation studies for a smoke run; its lines are marked and are not
//! verdicts.
//!
//! Failed criteria are reported on stdout; the process exits nonzero only
//! with `ACCEPTANCE_STRICT=1`, so that a workspace `cargo test` still runs
//! the remaining test binaries.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use deconfounder::ace::{ace_contrast, average_causal_effect_on, mean_in_sample_prediction, GateStatus, Intervention};
use deconfounder::data::{split_holdout_matrix, CauseKind, Dataset, DatasetParts, MaskedMatrix};
use deconfounder::linalg::{principal_angles, spd_inverse};
use deconfounder::outcome::{
    beta_log_posterior, fit_beta_regression, residualize, residualize_dataset, summarize_coefficients,
    BetaMcmcConfig, BetaPrior,
};
use deconfounder::plfm::{
    extract_substitute, fit_gibbs, simulate_factor_data, ChainSettings, PlfmKind, PlfmSpec, Sampler,
};
use deconfounder::ppc::{bayesian_p_values, PpcOptions};
use deconfounder::rng::{self, derive_seed};
use deconfounder::special::sigmoid;
use deconfounder::synth::{run_benchmark, Arm, BenchmarkConfig, BenchmarkReport};
use ndarray::{Array1, Array2};

type Verdict = Result<(bool, String), String>;

fn quick() -> bool {
    std::env::var("ACCEPTANCE_QUICK").is_ok_and(|v| v == "1")
}

fn normal_matrix(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed);
    Array2::from_shape_simple_fn((n, p), || rng::std_normal::<f64, _>(&mut r))
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// --- 1, 2: benchmark table -------------------------------------------------

fn benchmark() -> Result<BenchmarkReport, String> {
    let mut cfg = BenchmarkConfig {
        seed: derive_seed(2024, "benchmark", 0) & (i64::MAX as u64),
        ..BenchmarkConfig::default()
    };
    if quick() {
        cfg.n_sims = 2;
        cfg.n = 500;
    }
    run_benchmark(&cfg).map_err(err)
}

fn fmt_means(r: &deconfounder::synth::BenchmarkRow) -> String {
    Arm::ALL
        .iter()
        .map(|a| match r.mean[*a as usize] {
            Some(v) => format!("{}={v:.2}", a.as_str()),
            None => format!("{}=NA", a.as_str()),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn criterion_1(report: &BenchmarkReport) -> Verdict {
    let mut failing = Vec::new();
    let mut checked = 0;
    for r in report.rows.iter().filter(|r| r.nu_z >= r.nu_x) {
        checked += 1;
        if !r.ordering_holds {
            failing.push(format!("{} [{}]", r.ratio, fmt_means(r)));
        }
    }
    let detail = if failing.is_empty() {
        format!("ordering holds in all {checked} cells with nu_z >= nu_x")
    } else {
        format!("ordering fails in {}/{checked} cells: {}", failing.len(), failing.join("; "))
    };
    Ok((failing.is_empty(), detail))
}

fn criterion_2(report: &BenchmarkReport) -> Verdict {
    let deltas: Vec<Option<f64>> = report.rows.iter().map(|r| r.delta[0]).collect();
    let positive = deltas.iter().all(|d| d.is_some_and(|v| v > 0.0));
    let trend = report.delta_roa_trend.ok_or("no trend statistic")?;
    let pass = positive && trend.rho < 0.0 && trend.p_value < 0.05;
    let shown: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{}:{}", r.ratio, r.delta[0].map_or("NA".into(), |v| format!("{v:.3}"))))
        .collect();
    Ok((
        pass,
        format!(
            "all positive: {positive}; spearman rho {:.3}, p {:.4}; delta_roa {}",
            trend.rho,
            trend.p_value,
            shown.join(" ")
        ),
    ))
}

// --- 3: calibration of the predictive check ------------------------------

fn criterion_3() -> Verdict {
    let reps = if quick() { 5 } else { 50 };
    let mut lines = Vec::new();
    let mut pass = true;
    for kind in [PlfmKind::Ppca, PlfmKind::Bpmf] {
        let mut inside = 0;
        let mut misfit_ok = 0;
        let mut worst_shift: f64 = 0.0;
        for rep in 0..reps as u64 {
            let seed = derive_seed(7, "acceptance-ppc", rep * 2 + kind as u64);
            let f = normal_matrix(500, 2, seed);
            let sim = simulate_factor_data(f.view(), 19, 5, None, None, 0.5, seed + 1).map_err(err)?;
            let (obs, hold, _) = split_holdout_matrix(sim.x.view(), 0.2, seed + 2).map_err(err)?;
            let chain = ChainSettings {
                n_warmup: 300,
                n_samples: 100,
                thin: 1,
            };
            let draws = fit_gibbs(&obs, f.view(), &PlfmSpec::new(kind, 5, seed + 3), chain).map_err(err)?;
            let opts = PpcOptions {
                n_replicates: 200,
                tau: 0.1,
                seed: seed + 4,
                max_statistic_draws: None,
            };
            let rep_ok = bayesian_p_values(&draws, &obs, &hold, f.view(), &opts).map_err(err)?;
            inside += (0.3..=0.7).contains(&rep_ok.mean_p) as usize;
            let shifted = MaskedMatrix::new(&hold.values() + 1e3, hold.observed().to_owned()).map_err(err)?;
            let bad = bayesian_p_values(&draws, &obs, &shifted, f.view(), &opts).map_err(err)?;
            misfit_ok += (bad.mean_p < 0.05) as usize;
            worst_shift = worst_shift.max(bad.mean_p);
        }
        let ok = inside as f64 >= 0.9 * reps as f64 && misfit_ok == reps;
        pass &= ok;
        lines.push(format!(
            "{kind}: {inside}/{reps} in [0.3, 0.7], shifted below 0.05 in {misfit_ok}/{reps} (max {worst_shift:.3})"
        ));
    }
    Ok((pass, lines.join("; ")))
}

// --- 4: Gibbs full conditionals and subspace recovery --------------------

const REPS: usize = 10_000;

/// Mean and variance within 3 Monte-Carlo standard errors; `kurt` is the
/// excess kurtosis of the target.
fn moments_ok(xs: &[f64], mu: f64, var: f64, kurt: f64) -> bool {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let se_m = (var / n).sqrt();
    let se_v = var * (2.0 / (n - 1.0) + kurt / n).sqrt();
    (m - mu).abs() < 3.0 * se_m && (v - var).abs() < 3.0 * se_v
}

fn ig_kurtosis(a: f64) -> f64 {
    (30.0 * a - 66.0) / ((a - 3.0) * (a - 4.0))
}

fn fixture(kind: PlfmKind) -> Result<(Sampler<f64>, Array2<f64>, Array2<bool>, Array2<f64>), String> {
    let f = normal_matrix(40, 2, 30);
    let sim = simulate_factor_data(f.view(), 5, 2, None, None, 0.4, 31).map_err(err)?;
    let (obs, _, mask) = split_holdout_matrix(sim.x.view(), 0.3, 32).map_err(err)?;
    let s = Sampler::new(&obs, f.view(), &PlfmSpec::new(kind, 2, 33)).map_err(err)?;
    let x0 = obs.values().to_owned();
    Ok((s, x0, mask.mask.mapv(|h| !h), f))
}

fn z_conditional() -> Result<usize, String> {
    let (mut s, x, obs, f) = fixture(PlfmKind::Bpmf)?;
    s.state.z_mu = vec![0.3, -0.2];
    s.state.z_tau = vec![0.8, 1.7];
    let st = s.state.clone();
    let i = (0..x.nrows()).find(|&i| obs.row(i).iter().any(|o| !o)).ok_or("no masked row")?;
    let mut prec = Array2::from_diag(&Array1::from(vec![1.0 / 0.8, 1.0 / 1.7]));
    let mut lin = Array1::from(vec![0.3 / 0.8, -0.2 / 1.7]);
    for j in (0..5).filter(|&j| obs[[i, j]]) {
        let wj = st.w.row(j);
        let t = x[[i, j]] - st.a.row(j).dot(&f.row(i));
        for r in 0..2 {
            lin[r] += wj[r] * t / st.sigma2;
            for c in 0..2 {
                prec[[r, c]] += wj[r] * wj[c] / st.sigma2;
            }
        }
    }
    let cov = spd_inverse(prec.view()).map_err(err)?;
    let mean = cov.dot(&lin);
    let mut r = rng::stream(34);
    let mut samples = vec![Vec::with_capacity(REPS); 2];
    for _ in 0..REPS {
        s.step_z(&mut r).map_err(err)?;
        for k in 0..2 {
            samples[k].push(s.state.z[[i, k]]);
        }
    }
    Ok((0..2).filter(|&k| !moments_ok(&samples[k], mean[k], cov[[k, k]], 0.0)).count())
}

fn loading_conditional() -> Result<usize, String> {
    let (mut s, x, obs, f) = fixture(PlfmKind::Bpmf)?;
    s.state.v_mu = vec![0.1, -0.4];
    s.state.v_tau = vec![0.5, 2.0];
    s.state.sigma2 = 0.6;
    let st = s.state.clone();
    let (j, q) = (3, 4);
    let prior_prec = [1.0 / 0.5, 1.0 / 2.0, 1.0, 1.0];
    let prior_mean = [0.1, -0.4, 0.0, 0.0];
    let mut prec = Array2::<f64>::zeros((q, q));
    let mut lin = Array1::<f64>::zeros(q);
    for r in 0..q {
        prec[[r, r]] = prior_prec[r];
        lin[r] = prior_prec[r] * prior_mean[r];
    }
    for i in (0..x.nrows()).filter(|&i| obs[[i, j]]) {
        let u = [st.z[[i, 0]], st.z[[i, 1]], f[[i, 0]], f[[i, 1]]];
        for r in 0..q {
            lin[r] += u[r] * x[[i, j]] / st.sigma2;
            for c in 0..q {
                prec[[r, c]] += u[r] * u[c] / st.sigma2;
            }
        }
    }
    let cov = spd_inverse(prec.view()).map_err(err)?;
    let mean = cov.dot(&lin);
    let mut r = rng::stream(35);
    let mut samples = vec![Vec::with_capacity(REPS); q];
    for _ in 0..REPS {
        s.step_loadings(&mut r).map_err(err)?;
        let row = [s.state.w[[j, 0]], s.state.w[[j, 1]], s.state.a[[j, 0]], s.state.a[[j, 1]]];
        for k in 0..q {
            samples[k].push(row[k]);
        }
    }
    Ok((0..q).filter(|&k| !moments_ok(&samples[k], mean[k], cov[[k, k]], 0.0)).count())
}

fn sigma2_conditional() -> Result<usize, String> {
    let (mut s, x, obs, f) = fixture(PlfmKind::Ppca)?;
    let st = s.state.clone();
    let (mut ssr, mut n_obs) = (0.0, 0.0);
    for i in 0..x.nrows() {
        for j in (0..5).filter(|&j| obs[[i, j]]) {
            let m = st.w.row(j).dot(&st.z.row(i)) + st.a.row(j).dot(&f.row(i));
            ssr += (x[[i, j]] - m).powi(2);
            n_obs += 1.0;
        }
    }
    let (a, b): (f64, f64) = (3.0 + n_obs / 2.0, 1.0 + ssr / 2.0);
    let var: f64 = b * b / ((a - 1.0).powi(2) * (a - 2.0));
    let mut r = rng::stream(36);
    let samples: Vec<f64> = (0..REPS)
        .map(|_| {
            s.step_sigma2(&mut r);
            s.state.sigma2
        })
        .collect();
    Ok(!moments_ok(&samples, b / (a - 1.0), var, ig_kurtosis(a)) as usize)
}

fn hierarchy_conditionals() -> Result<usize, String> {
    let (mut s, _, _, _) = fixture(PlfmKind::Bpmf)?;
    s.state.z_tau = vec![0.7, 1.4];
    s.state.v_tau = vec![1.1, 0.5];
    s.state.z_mu = vec![0.2, -0.1];
    s.state.v_mu = vec![-0.3, 0.4];
    let st = s.state.clone();
    let mut bad = 0;
    let mut r = rng::stream(37);
    let (mut zs, mut vs) = (vec![Vec::new(); 2], vec![Vec::new(); 2]);
    for _ in 0..REPS {
        s.step_hierarchy_means(&mut r);
        for k in 0..2 {
            zs[k].push(s.state.z_mu[k]);
            vs[k].push(s.state.v_mu[k]);
        }
    }
    for k in 0..2 {
        for (m, tau, out) in [(&st.z, st.z_tau[k], &zs[k]), (&st.w, st.v_tau[k], &vs[k])] {
            let n = m.nrows() as f64;
            let v = 1.0 / (1.0 + n / tau);
            bad += !moments_ok(out, v * m.column(k).sum() / tau, v, 0.0) as usize;
        }
    }
    s.state = st.clone();
    let (mut zs, mut vs) = (vec![Vec::new(); 2], vec![Vec::new(); 2]);
    for _ in 0..REPS {
        s.step_hierarchy_variances(&mut r);
        for k in 0..2 {
            zs[k].push(s.state.z_tau[k]);
            vs[k].push(s.state.v_tau[k]);
        }
    }
    for k in 0..2 {
        for (m, mu, out) in [(&st.z, st.z_mu[k], &zs[k]), (&st.w, st.v_mu[k], &vs[k])] {
            let n = m.nrows() as f64;
            let ss: f64 = m.column(k).iter().map(|x| (x - mu).powi(2)).sum();
            let (a, b) = (3.0 + n / 2.0, 2.0 + ss / 2.0);
            let var = b * b / ((a - 1.0).powi(2) * (a - 2.0));
            if a <= 4.0 {
                // the sample variance has no finite variance here; mean only
                let mean = out.iter().sum::<f64>() / out.len() as f64;
                bad += ((mean - b / (a - 1.0)).abs() >= 3.0 * (var / out.len() as f64).sqrt()) as usize;
            } else {
                bad += !moments_ok(out, b / (a - 1.0), var, ig_kurtosis(a)) as usize;
            }
        }
    }
    Ok(bad)
}

fn criterion_4() -> Verdict {
    let checks = [
        ("z", z_conditional()?, 2),
        ("loadings", loading_conditional()?, 4),
        ("sigma2", sigma2_conditional()?, 1),
        ("hierarchy", hierarchy_conditionals()?, 8),
    ];
    let bad: usize = checks.iter().map(|c| c.1).sum();
    let total: usize = checks.iter().map(|c| c.2).sum();

    let f = normal_matrix(2000, 2, 3);
    let sim = simulate_factor_data(f.view(), 10, 3, None, None, 1e-2, 4).map_err(err)?;
    let x = MaskedMatrix::fully_observed(sim.x.clone()).map_err(err)?;
    let chain = ChainSettings {
        n_warmup: 300,
        n_samples: 200,
        thin: 1,
    };
    let draws = fit_gibbs(&x, f.view(), &PlfmSpec::new(PlfmKind::Ppca, 3, 5), chain).map_err(err)?;
    let worst = principal_angles(draws.mean_w().view(), sim.w.view())
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .to_degrees();
    Ok((
        bad == 0 && worst < 10.0,
        format!("{}/{total} conditional moments within 3 MCSE; largest subspace angle {worst:.3} deg", total - bad),
    ))
}

// --- 5: Beta regression ----------------------------------------------------

fn beta_sample(mu: f64, phi: f64, r: &mut rng::StreamRng) -> f64 {
    let g1: f64 = rng::gamma(r, mu * phi, 1.0);
    let g2: f64 = rng::gamma(r, (1.0 - mu) * phi, 1.0);
    (g1 / (g1 + g2)).clamp(1e-12, 1.0 - 1e-12)
}

fn simulate_beta(x: &Array2<f64>, b0: f64, beta: &[f64], phi: f64, seed: u64) -> Array1<f64> {
    let mut r = rng::stream(seed);
    let beta = Array1::from(beta.to_vec());
    x.rows()
        .into_iter()
        .map(|row| beta_sample(sigmoid(b0 + row.dot(&beta)), phi, &mut r))
        .collect()
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

fn criterion_5() -> Verdict {
    // gradient against central differences at 20 random points
    let x = normal_matrix(200, 3, 50);
    let y = simulate_beta(&x, -0.5, &[0.4, -0.2, 0.1], 8.0, 51);
    let prior = BetaPrior::default();
    let mut r = rng::stream(52);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..20 {
        let mut theta: Array1<f64> = (0..5).map(|_| rng::std_normal::<f64, _>(&mut r)).collect();
        theta[4] = 3.0 * rng::uniform::<f64, _>(&mut r);
        let (_, g) = beta_log_posterior(theta.view(), x.view(), y.view(), &prior);
        let mut diff = 0.0;
        for j in 0..5 {
            let h = 1e-5 * (1.0 + theta[j].abs());
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (beta_log_posterior(up.view(), x.view(), y.view(), &prior).0
                - beta_log_posterior(dn.view(), x.view(), y.view(), &prior).0)
                / (2.0 * h);
            diff += (fd - g[j]).powi(2);
        }
        let rel = diff.sqrt() / g.dot(&g).sqrt().max(1e-12);
        worst_rel = worst_rel.max(rel);
    }

    // recovery at N = 2000
    let truth = [-1.0, 0.5, -0.3, 0.0];
    let x = normal_matrix(2000, 3, 60);
    let y = simulate_beta(&x, truth[0], &truth[1..], 20.0, 61);
    let cfg = BetaMcmcConfig {
        n_warmup: 1000,
        n_samples: 2000,
        thin: 1,
        seed: 62,
    };
    let fit = fit_beta_regression(x.view(), y.view(), &names(3), &prior, &cfg).map_err(err)?;
    let sum = summarize_coefficients(&fit).map_err(err)?;
    let mut worst_err: f64 = 0.0;
    for (row, t) in sum.rows.iter().zip(truth.iter()) {
        worst_err = worst_err.max((row.mean - t).abs());
    }
    let log_phi = fit.phi_draws().mapv(f64::ln).mean().unwrap_or(f64::NAN);
    worst_err = worst_err.max((log_phi - 20f64.ln()).abs());

    // 95% coverage over 100 simulations, every coefficient
    let (mut hits, mut total) = (0, 0);
    for rep in 0..100u64 {
        let x = normal_matrix(300, 3, 1000 + rep);
        let y = simulate_beta(&x, truth[0], &truth[1..], 10.0, 2000 + rep);
        let cfg = BetaMcmcConfig {
            n_warmup: 500,
            n_samples: 1000,
            thin: 1,
            seed: 3000 + rep,
        };
        let fit = fit_beta_regression(x.view(), y.view(), &names(3), &prior, &cfg).map_err(err)?;
        let sum = summarize_coefficients(&fit).map_err(err)?;
        for (row, t) in sum.rows.iter().zip(truth.iter()) {
            hits += (row.lo95 <= *t && *t <= row.hi95) as usize;
            total += 1;
        }
    }
    let coverage = hits as f64 / total as f64;
    Ok((
        worst_rel < 1e-5 && worst_err < 0.1 && (0.90..=0.99).contains(&coverage),
        format!(
            "max gradient rel. error {worst_rel:.2e}; max |mean - truth| {worst_err:.4} (coefficients and log phi); coverage {coverage:.3} over {total} intervals"
        ),
    ))
}

// --- 6: ACE exactness --------------------------------------------------------

fn ace_dataset(n: usize, seed: u64) -> Result<Dataset<f64>, String> {
    let mut r = rng::stream(seed);
    let mut nrm = || rng::std_normal::<f64, _>(&mut r);
    let z: Vec<f64> = (0..n).map(|_| nrm()).collect();
    let age: Array1<f64> = (0..n).map(|_| nrm()).collect();
    let causes = Array2::from_shape_fn((n, 5), |(i, j)| 0.8 * z[i] * (j as f64 - 2.0) + 0.3 * age[i] + 0.5 * nrm());
    let mut covariates = Array2::zeros((n, 1));
    covariates.column_mut(0).assign(&age);
    let outcome = causes
        .rows()
        .into_iter()
        .map(|c| sigmoid(-1.0 + 0.4 * c[0] - 0.2 * c[2] + 0.3 * nrm()))
        .collect();
    Dataset::new(DatasetParts {
        causes,
        cause_names: (0..5).map(|j| format!("c{j}")).collect(),
        cause_kinds: vec![CauseKind::Thickness; 5],
        covariates,
        covariate_names: vec!["age".into()],
        age_column: Some(0),
        outcome,
        outcome_name: "adas".into(),
        tiv: None,
        tiv_name: None,
    })
    .map_err(err)
}

fn criterion_6() -> Verdict {
    let ds = ace_dataset(400, 70)?;
    let x = MaskedMatrix::fully_observed(ds.causes().to_owned()).map_err(err)?;
    let chain = ChainSettings {
        n_warmup: 200,
        n_samples: 100,
        thin: 1,
    };
    let draws = fit_gibbs(&x, ds.covariates(), &PlfmSpec::new(PlfmKind::Ppca, 1, 71), chain).map_err(err)?;
    let zh = extract_substitute(&draws).map_err(err)?;
    let design = residualize_dataset(&ds, &draws, &zh, &[]).map_err(err)?;
    let cfg = BetaMcmcConfig {
        n_warmup: 500,
        n_samples: 1000,
        thin: 1,
        seed: 72,
    };
    let fit = fit_beta_regression(design.matrix().view(), ds.outcome(), &design.column_names(), &BetaPrior::default(), &cfg)
        .map_err(err)?;

    let identity = average_causal_effect_on(&design, &fit, ds.causes()).map_err(err)?;
    let observed = mean_in_sample_prediction(&design, &fit).map_err(err)?;
    let max_dev = identity
        .iter()
        .zip(&observed)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let gate = GateStatus::overridden(None);
    let a = Intervention::new(vec![0, 3], vec![1.0, -0.5]).map_err(err)?;
    let b = Intervention::new(vec![0], vec![-1.0]).map_err(err)?;
    let ab = ace_contrast(&ds, &design, &fit, &a, &b, gate).map_err(err)?;
    let ba = ace_contrast(&ds, &design, &fit, &b, &a, gate).map_err(err)?;
    let antisymmetric = ab.draws.iter().zip(&ba.draws).all(|(u, v)| *u == -*v)
        && ab.point == -ba.point
        && ab.lo95 == -ba.hi95
        && ab.hi95 == -ba.lo95;
    Ok((
        max_dev <= 1e-12 && antisymmetric,
        format!(
            "identity vs in-sample mean: max per-draw deviation {max_dev:.1e} over {} draws; contrast antisymmetric exactly: {antisymmetric}",
            observed.len()
        ),
    ))
}

// --- 7: residuals ------------------------------------------------------------

fn criterion_7() -> Verdict {
    let f = normal_matrix(500, 1, 80);
    let sim = simulate_factor_data(f.view(), 10, 2, None, None, 1e-6, 81).map_err(err)?;
    let x = MaskedMatrix::fully_observed(sim.x.clone()).map_err(err)?;
    let chain = ChainSettings {
        n_warmup: 300,
        n_samples: 200,
        thin: 1,
    };
    let draws = fit_gibbs(&x, f.view(), &PlfmSpec::new(PlfmKind::Ppca, 2, 82), chain).map_err(err)?;
    let zh = extract_substitute(&draws).map_err(err)?;
    let r1 = residualize(sim.x.view(), f.view(), &draws, &zh).map_err(err)?;
    let r2 = residualize(sim.x.view(), f.view(), &draws, &zh).map_err(err)?;
    let max = r1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pure = r1.iter().zip(r2.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok((
        max < 0.05 && pure,
        format!("noiseless max |residual| {max:.2e}; repeated calls bit-identical: {pure}"),
    ))
}

// --- 8: CLI determinism --------------------------------------------------------

const CLI_CONFIG: &str = r#"
seed = 3
out_dir = "out"
[simulate]
n = 300
d = 8
[data]
path = "out/dataset.csv"
roles_file = "out/roles.toml"
[model]
latent_dim = 2
chain = { n_warmup = 100, n_samples = 100, thin = 1 }
[check]
n_replicates = 100
[effects]
report = "out/ppc_report.toml"
outcome_max = 1
n_warmup = 300
n_samples = 300
[[effects.interventions]]
label = "a"
set = { x1 = 1.0 }
[[effects.interventions]]
label = "b"
set = { x1 = -1.0 }
[[effects.contrasts]]
a = "a"
b = "b"
[benchmark]
grid = [[3.0, 1.0], [1.0, 1.0], [1.0, 3.0]]
n_sims = 2
n = 300
d = 8
k_fit = 2
chain = { n_warmup = 60, n_samples = 30, thin = 1 }
ppc = { n_replicates = 100, tau = 0.1, max_statistic_draws = 10 }
"#;

fn run_all(dir: &Path, threads: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    std::fs::write(dir.join("run.toml"), CLI_CONFIG).map_err(err)?;
    for cmd in ["simulate", "fit", "check", "effects", "benchmark"] {
        let o = Command::new(env!("CARGO_BIN_EXE_deconfounder"))
            .args(["-c", "run.toml", "--threads", threads, cmd])
            .current_dir(dir)
            .output()
            .map_err(err)?;
        if !o.status.success() {
            return Err(format!("{cmd} failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
    }
    let mut files: Vec<_> = std::fs::read_dir(dir.join("out"))
        .map_err(err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            std::fs::read(&p).map(|b| (name, b)).map_err(err)
        })
        .collect()
}

fn criterion_8() -> Verdict {
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    let fa = run_all(a.path(), "1")?;
    let fb = run_all(b.path(), "2")?;
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let same_names = fa.len() == fb.len() && fa.iter().zip(&fb).all(|(x, y)| x.0 == y.0);
    Ok((
        same_names && differing.is_empty(),
        format!(
            "{} artifacts from simulate/fit/check/effects/benchmark compared; differing: {}",
            fa.len(),
            if differing.is_empty() { "none".into() } else { differing.join(", ") }
        ),
    ))
}

// ---------------------------------------------------------------------------

fn report(n: usize, verdict: std::thread::Result<Verdict>, elapsed: f64, failures: &mut usize) {
    let tag = if quick() && n <= 3 { " (reduced scale, not a verdict)" } else { "" };
    let (pass, detail) = match verdict {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(_) => (false, "panicked".into()),
    };
    if !pass {
        *failures += 1;
    }
    println!(
        "criterion {n}: {}{tag}  [{elapsed:.0}s] {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn main() {
    // `cargo test` passes harness flags such as `--list`; nothing to list here
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut failures = 0;
    let t = Instant::now();
    let bench = catch_unwind(benchmark);
    let bench_secs = t.elapsed().as_secs_f64();
    let from_bench = |f: fn(&BenchmarkReport) -> Verdict| match &bench {
        Ok(Ok(r)) => Ok(f(r)),
        Ok(Err(e)) => Ok(Err(e.clone())),
        Err(_) => Ok(Err("benchmark panicked".into())),
    };
    report(1, from_bench(criterion_1), bench_secs, &mut failures);
    report(2, from_bench(criterion_2), bench_secs, &mut failures);
    let others: [(usize, fn() -> Verdict); 6] = [
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    for (n, f) in others {
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f));
        report(n, v, t.elapsed().as_secs_f64(), &mut failures);
    }
    if let Ok(Ok(r)) = &bench {
        println!("benchmark table (mean 100 x RMSE over {} simulations per cell):", r.config.n_sims);
        print!("{}", r.to_csv());
    }
    println!("{} of 8 criteria passed", 8 - failures);
    if failures > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
