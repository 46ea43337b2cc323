use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use deconfounder::ace::{ace_contrast, average_causal_effect, mean_in_sample_prediction, AceEstimate, GateStatus, Intervention};
use deconfounder::data::{
    apply_holdout_mask, load_dataset, normalize_by_tiv, split_holdout, standardize, write_dataset, RoleSpec,
};
use deconfounder::outcome::{
    equal_tailed_interval, fit_beta_regression, residualize_dataset, scale_outcome, summarize_coefficients,
    BetaMcmcConfig,
};
use deconfounder::plfm::{extract_substitute, fit_gibbs, read_draws, write_draws};
use deconfounder::ppc::{bayesian_p_values, PpcOptions};
use deconfounder::synth::{cluster_sizes, generate, generate_surrogate, run_benchmark, Arm};
use deconfounder::{Dataset64, Error, PosteriorDraws64, Result, Standardization64};
use log::info;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::output::{ensure_dir, file_digest, write_report, write_table};
use crate::table;

/// Everything `check` and `effects` need to rebuild the fitted data.
#[derive(Debug, Serialize, Deserialize)]
struct FitContext {
    config: RunConfig,
    data_path: PathBuf,
    roles: RoleSpec,
    normalize_tiv: bool,
    standardization: Standardization64,
    /// Held-out cells as row-major flat indices.
    holdout_cells: Vec<usize>,
    cause_names: Vec<String>,
}

/// Loads, optionally TIV-normalizes and standardizes a dataset.
fn prepare(path: &Path, roles: &RoleSpec, normalize_tiv: bool) -> Result<(Dataset64, Standardization64)> {
    let mut ds: Dataset64 = load_dataset(path, roles)?;
    if normalize_tiv && ds.tiv().is_some() {
        ds = normalize_by_tiv(&ds)?;
    }
    Ok(standardize(&ds))
}

fn csv_row(values: &[f64]) -> String {
    let mut s = values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

pub fn simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let s = &cfg.simulate;
    let sc = s.synth_config(cfg.stage_seed("simulate"))?;
    let sd = if s.use_data {
        let roles = cfg.data.role_spec()?;
        let ds: Dataset64 = load_dataset(cfg.data.path()?, &roles)?;
        let age = ds
            .age_column()
            .ok_or_else(|| Error::Roles("simulation from data needs a column with role `age`".into()))?;
        generate(ds.causes(), ds.covariates(), age, &sc)?
    } else {
        generate_surrogate(s.n, s.d, &s.surrogate, &sc)?
    };
    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    let mut written = Vec::new();

    let pre = crate::output::preamble(cfg, "simulate");
    let data_path = dir.join("dataset.csv");
    write_dataset(&sd.dataset, &data_path, &pre)?;
    written.push(data_path);

    let truth = format!("{}\n{}", sd.dataset.cause_names().join(","), csv_row(&sd.true_effects));
    written.push(write_table(&dir.join("truth.csv"), cfg, "simulate", &truth)?);

    let roles_path = dir.join("roles.toml");
    std::fs::write(&roles_path, sd.dataset.role_spec().to_toml_string()).map_err(|e| Error::Io {
        path: roles_path.clone(),
        source: e,
    })?;
    written.push(roles_path);

    let sizes: Vec<i64> = cluster_sizes(&sd.u, sc.n_clusters).iter().map(|&c| c as i64).collect();
    let report = table! {
        "n_rows" => sd.dataset.n_rows() as i64,
        "n_causes" => sd.dataset.n_causes() as i64,
        "nu_x" => sc.nu_x,
        "nu_z" => sc.nu_z,
        "nu_eps" => sc.nu_eps(),
        "beta0" => sd.beta0,
        "gamma" => sd.true_gamma,
        "sigma_k" => sd.sigma_k.clone(),
        "cluster_sizes" => sizes,
        "positive_fraction" => sd.positive_fraction,
        "n_nonzero_effects" => sd.true_effects.iter().filter(|&&e| e != 0.0).count() as i64,
    };
    written.push(write_report(&dir.join("simulate.toml"), cfg, "simulate", report)?);
    Ok(written)
}

pub fn fit(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let roles = cfg.data.role_spec()?;
    let path = cfg.data.path()?;
    let (ds, st) = prepare(path, &roles, cfg.data.normalize_tiv)?;
    let m = &cfg.model;
    let (obs, _, mask) = split_holdout(&ds, m.hold_fraction, cfg.stage_seed("holdout"))?;
    let spec = m.spec(cfg.stage_seed("plfm"));
    info!("fitting {} with K = {} on {} x {}", spec.kind, spec.latent_dim, ds.n_rows(), ds.n_causes());
    let draws = fit_gibbs(&obs, ds.covariates(), &spec, m.chain)?;
    let z = extract_substitute(&draws)?;

    let d = ds.n_causes();
    let ctx = FitContext {
        config: cfg.clone(),
        data_path: path.to_path_buf(),
        roles,
        normalize_tiv: cfg.data.normalize_tiv,
        standardization: st,
        holdout_cells: mask
            .mask
            .indexed_iter()
            .filter_map(|((i, j), &h)| h.then_some(i * d + j))
            .collect(),
        cause_names: ds.cause_names().to_vec(),
    };
    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    let draws_path = dir.join("draws.bin");
    let context = serde_json::to_value(&ctx).map_err(|e| Error::Format(e.to_string()))?;
    write_draws(&draws_path, &draws, &context)?;

    let k = z.z_hat.ncols();
    let mut body = (1..=k).map(|c| format!("z{c}")).collect::<Vec<_>>().join(",");
    body.push('\n');
    for row in z.z_hat.rows() {
        body.push_str(&csv_row(&row.to_vec()));
    }
    let sub = write_table(&dir.join("substitute.csv"), cfg, "fit", &body)?;

    let dg = &draws.diagnostics;
    let report = table! {
        "kind" => spec.kind.as_str(),
        "latent_dim" => spec.latent_dim as i64,
        "n_warmup" => m.chain.n_warmup as i64,
        "n_samples" => m.chain.n_samples as i64,
        "thin" => m.chain.thin as i64,
        "n_draws" => draws.len() as i64,
        "n_rows" => ds.n_rows() as i64,
        "n_causes" => d as i64,
        "n_held_out" => mask.n_held() as i64,
        "sigma2_mean" => dg.sigma2_mean,
        "sigma2_sd" => dg.sigma2_sd,
        "sigma2_ess" => dg.sigma2_ess,
        "loading_spread" => dg.loading_spread,
        "draws_digest" => file_digest(&draws_path)?,
    };
    let rep = write_report(&dir.join("fit_report.toml"), cfg, "fit", report)?;
    Ok(vec![draws_path, sub, rep])
}

struct Loaded {
    draws: PosteriorDraws64,
    ctx: FitContext,
    ds: Dataset64,
    digest: String,
}

fn load_fit(path: &Path) -> Result<Loaded> {
    let file = read_draws::<f64>(path)?;
    let ctx: FitContext = serde_json::from_value(file.context)
        .map_err(|e| Error::Format(format!("{}: draws file lacks fit context: {e}", path.display())))?;
    let (ds, _) = prepare(&ctx.data_path, &ctx.roles, ctx.normalize_tiv)?;
    if ds.n_rows() != file.draws.n_rows() || ds.cause_names() != ctx.cause_names.as_slice() {
        return Err(Error::Shape(format!(
            "{} no longer matches the fitted data",
            ctx.data_path.display()
        )));
    }
    Ok(Loaded {
        draws: file.draws,
        ctx,
        ds,
        digest: file_digest(path)?,
    })
}

pub struct CheckOutcome {
    pub written: Vec<PathBuf>,
    pub passed: bool,
    pub mean_p: f64,
    pub tau: f64,
}

pub fn check(cfg: &RunConfig) -> Result<CheckOutcome> {
    let draws_path = cfg.draws_path(&cfg.check.draws);
    let l = load_fit(&draws_path)?;
    let (n, d) = l.ds.causes().dim();
    let mut mask = Array2::from_elem((n, d), false);
    for &c in &l.ctx.holdout_cells {
        if c >= n * d {
            return Err(Error::Format("holdout cell out of range".into()));
        }
        mask[[c / d, c % d]] = true;
    }
    let (obs, hold) = apply_holdout_mask(l.ds.causes(), &mask)?;
    let c = &cfg.check;
    let opts = PpcOptions {
        n_replicates: c.n_replicates,
        tau: c.tau,
        seed: cfg.stage_seed("ppc"),
        max_statistic_draws: c.max_statistic_draws,
    };
    let report = bayesian_p_values(&l.draws, &obs, &hold, l.ds.covariates(), &opts)?;
    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    let rows = write_table(&dir.join("ppc_rows.csv"), cfg, "check", &report.rows_csv())?;
    let summary = table! {
        "draws" => draws_path.display().to_string(),
        "draws_digest" => l.digest.clone(),
        "kind" => l.draws.kind().as_str(),
        "mean_p" => report.mean_p,
        "tau" => report.tau,
        "passed" => report.passed,
        "n_replicates" => report.n_replicates as i64,
        "n_scored" => report.n_scored as i64,
        "n_excluded" => report.n_excluded as i64,
    };
    let rep = write_report(&dir.join("ppc_report.toml"), cfg, "check", summary)?;
    Ok(CheckOutcome {
        written: vec![rows, rep],
        passed: report.passed,
        mean_p: report.mean_p,
        tau: report.tau,
    })
}

#[derive(Deserialize)]
struct CheckSummary {
    draws_digest: String,
    mean_p: f64,
    tau: f64,
    passed: bool,
}

fn gate_status(cfg: &RunConfig, digest: &str) -> Result<GateStatus> {
    let e = &cfg.effects;
    let summary = match &e.report {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|err| Error::Io {
                path: p.clone(),
                source: err,
            })?;
            let s: CheckSummary =
                toml::from_str(&text).map_err(|err| Error::Format(format!("{}: {err}", p.display())))?;
            if s.draws_digest != digest {
                return Err(Error::Config(format!("{} was produced for a different draws file", p.display())));
            }
            Some(s)
        }
        None => None,
    };
    let gate = match summary {
        Some(s) => GateStatus {
            mean_p: Some(s.mean_p),
            tau: s.tau,
            passed: s.passed,
            overridden: e.override_gate,
        },
        None if e.override_gate => GateStatus::overridden(None),
        None => GateStatus {
            mean_p: None,
            tau: f64::NAN,
            passed: false,
            overridden: false,
        },
    };
    gate.enforce()?;
    Ok(gate)
}

fn ace_line(label: &str, a: &AceEstimate, max: f64, contrast: bool) -> String {
    // the outcome map is affine; a contrast only scales
    let raw = |v: f64| if contrast { v * (max + 1.0) } else { v * (max + 1.0) - 0.5 };
    format!(
        "{label},{},{},{},{},{},{},{},{},{},{},{}\n",
        a.point,
        a.lo95,
        a.hi95,
        raw(a.point),
        raw(a.lo95),
        raw(a.hi95),
        a.n_individuals,
        a.n_draws,
        a.gate.passed,
        a.gate.overridden,
        a.gate.mean_p.map_or_else(|| "NA".to_string(), |p| p.to_string()),
    )
}

pub fn effects(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let e = &cfg.effects;
    let draws_path = cfg.draws_path(&e.draws);
    let l = load_fit(&draws_path)?;
    let gate = gate_status(cfg, &l.digest)?;

    // resolve interventions before the expensive fit
    let mut ivs: Vec<(String, Intervention)> = Vec::new();
    for spec in &e.interventions {
        if ivs.iter().any(|(lab, _)| *lab == spec.label) || spec.label == "observed" {
            return Err(Error::Config(format!("duplicate intervention label `{}`", spec.label)));
        }
        let pairs: Vec<(String, f64)> = spec.set.iter().map(|(k, v)| (k.clone(), *v)).collect();
        let mut iv = Intervention::by_name(&l.ds, &pairs)?;
        if e.raw_units {
            iv = iv.from_raw(&l.ctx.standardization);
        }
        ivs.push((spec.label.clone(), iv));
    }
    let find = |label: &str| {
        ivs.iter()
            .find(|(l, _)| l == label)
            .map(|(_, iv)| iv)
            .ok_or_else(|| Error::Config(format!("contrast refers to unknown intervention `{label}`")))
    };
    let contrasts = e
        .contrasts
        .iter()
        .map(|c| Ok((c, find(&c.a)?, find(&c.b)?)))
        .collect::<Result<Vec<_>>>()?;

    let z = extract_substitute(&l.draws)?;
    let design = residualize_dataset(&l.ds, &l.draws, &z, &e.extra_covariates)?;
    let y = scale_outcome(l.ds.outcome(), e.outcome_max)?;
    let mcmc = BetaMcmcConfig {
        n_warmup: e.n_warmup,
        n_samples: e.n_samples,
        thin: e.thin,
        seed: cfg.stage_seed("outcome"),
    };
    info!("fitting the outcome model on {} columns", design.column_names().len());
    let fit = fit_beta_regression(design.matrix().view(), y.view(), &design.column_names(), &e.prior, &mcmc)?;
    if fit.poorly_mixed {
        log::warn!("outcome chain acceptance rate {:.3} suggests poor mixing", fit.acceptance_rate);
    }
    let summary = summarize_coefficients(&fit)?;

    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    let mut written = vec![write_table(&dir.join("coefficients.csv"), cfg, "effects", &summary.to_csv())?];

    let mut body = String::from(
        "label,point,lo95,hi95,point_outcome,lo95_outcome,hi95_outcome,n,n_draws,gate_passed,gate_overridden,mean_p\n",
    );
    let observed = mean_in_sample_prediction(&design, &fit)?;
    let (lo, hi) = equal_tailed_interval(&observed, 0.95);
    let obs = AceEstimate {
        point: observed.iter().sum::<f64>() / observed.len() as f64,
        lo95: lo,
        hi95: hi,
        n_individuals: l.ds.n_rows(),
        n_draws: observed.len(),
        gate,
        draws: observed,
    };
    body.push_str(&ace_line("observed", &obs, e.outcome_max, false));
    for (label, iv) in &ivs {
        let a = average_causal_effect(&l.ds, &design, &fit, iv, gate)?;
        body.push_str(&ace_line(label, &a, e.outcome_max, false));
    }
    for (c, a, b) in &contrasts {
        let est = ace_contrast(&l.ds, &design, &fit, a, b, gate)?;
        body.push_str(&ace_line(&format!("{} - {}", c.a, c.b), &est, e.outcome_max, true));
    }
    written.push(write_table(&dir.join("ace.csv"), cfg, "effects", &body)?);

    let mut gate_t = table! {
        "passed" => gate.passed,
        "overridden" => gate.overridden,
        "tau" => gate.tau,
    };
    if let Some(p) = gate.mean_p {
        gate_t.insert("mean_p".into(), toml::Value::Float(p));
    }
    let mut ivt = toml::Table::new();
    for (label, iv) in &ivs {
        let mut t = BTreeMap::new();
        for (&j, &v) in iv.columns.iter().zip(&iv.values) {
            t.insert(l.ds.cause_names()[j].clone(), v);
        }
        ivt.insert(label.clone(), toml::Value::try_from(t).expect("serializable"));
    }
    let mut report = table! {
        "draws" => draws_path.display().to_string(),
        "draws_digest" => l.digest.clone(),
        "design_columns" => design.column_names(),
        "n_draws" => fit.n_draws() as i64,
        "acceptance_rate" => fit.acceptance_rate,
        "poorly_mixed" => fit.poorly_mixed,
        "n_significant" => summary.rows.iter().filter(|r| r.significant).count() as i64,
    };
    report.insert("gate".into(), toml::Value::Table(gate_t));
    report.insert("interventions_standardized".into(), toml::Value::Table(ivt));
    written.push(write_report(&dir.join("effects.toml"), cfg, "effects", report)?);
    Ok(written)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn benchmark(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let b = &cfg.benchmark;
    info!(
        "benchmark: {} cells x {} simulations (N = {}, D = {})",
        b.grid.len(),
        b.n_sims,
        b.n,
        b.d
    );
    let report = run_benchmark(b)?;
    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    let table1 = write_table(&dir.join("table1.csv"), cfg, "benchmark", &report.to_csv())?;

    let mut body = String::from(
        "cell,sim,ratio,seed,non_causal,roa,ppca,bpmf,oracle,ppc_mean_p_ppca,ppc_mean_p_bpmf,positive_fraction,excluded\n",
    );
    for r in &report.records {
        let excluded = r
            .excluded
            .iter()
            .map(|(a, why)| format!("{}: {}", a.as_str(), why.replace([',', '\n'], ";")))
            .collect::<Vec<_>>()
            .join(" | ");
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.cell,
            r.sim,
            report.rows[r.cell].ratio,
            r.seed,
            opt(r.rmse[0]),
            opt(r.rmse[1]),
            opt(r.rmse[2]),
            opt(r.rmse[3]),
            opt(r.rmse[4]),
            opt(r.ppc_mean_p[0]),
            opt(r.ppc_mean_p[1]),
            r.positive_fraction,
            excluded
        );
    }
    let records = write_table(&dir.join("records.csv"), cfg, "benchmark", &body)?;

    let rows: Vec<toml::Value> = report
        .rows
        .iter()
        .map(|r| {
            toml::Value::Table(table! {
                "ratio" => r.ratio.clone(),
                "ordering_holds" => r.ordering_holds,
                "per_sim_ordering" => r.per_sim_ordering,
                "delta_roa_positive" => r.delta[0].is_some_and(|v| v > 0.0),
            })
        })
        .collect();
    let mut summary = table! {
        "n_cells" => report.rows.len() as i64,
        "n_sims" => b.n_sims as i64,
        "excluded_ppca" => report.n_excluded(Arm::Ppca) as i64,
        "excluded_bpmf" => report.n_excluded(Arm::Bpmf) as i64,
        "ordering_holds_all" => report.rows.iter().all(|r| r.ordering_holds),
    };
    if let Some(t) = report.delta_roa_trend {
        summary.insert(
            "delta_roa_trend".into(),
            toml::Value::Table(table! { "rho" => t.rho, "p_value" => t.p_value, "n" => t.n as i64 }),
        );
    }
    summary.insert("rows".into(), toml::Value::Array(rows));
    let rep = write_report(&dir.join("benchmark.toml"), cfg, "benchmark", summary)?;
    Ok(vec![table1, records, rep])
}
