//! `deconfounder`: simulate data, fit a factor model, check it, estimate
//! causal effects, or run the benchmark.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure, 4 failed (or missing) predictive check.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deconfounder::ace::Intervention;
use deconfounder::data::RoleSpec;
use deconfounder::plfm::PlfmKind;
use deconfounder::{Error, ErrorCategory, Result};

use config::{InterventionSpec, InterventionsFile, RunConfig};

#[derive(Parser)]
#[command(name = "deconfounder", version, about = "Causal effects of multiple causes with a substitute confounder")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a semi-synthetic dataset with known effects.
    Simulate(SimulateArgs),
    /// Fit the factor model and store its posterior draws.
    Fit(FitArgs),
    /// Posterior predictive check of a stored fit.
    Check(CheckArgs),
    /// Outcome model, coefficient table and average causal effects.
    Effects(EffectsArgs),
    /// RMSE comparison of the effect estimators over a grid of settings.
    Benchmark(BenchmarkArgs),
    /// Print the resolved configuration.
    Config,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// `nu_x/nu_z`, e.g. `3/2`.
    #[arg(long)]
    ratio: Option<String>,
    /// Use the causes and covariates of `--data` instead of the surrogate.
    #[arg(long)]
    use_data: bool,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct DataArgs {
    /// Delimited input table.
    #[arg(long)]
    data: Option<PathBuf>,
    /// TOML file with a `[roles]` table.
    #[arg(long)]
    roles: Option<PathBuf>,
    /// `column=role`, repeatable.
    #[arg(long = "role")]
    role: Vec<String>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<PlfmKind>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    hold_fraction: Option<f64>,
}

#[derive(Args)]
struct CheckArgs {
    /// Draws file written by `fit`.
    #[arg(long)]
    draws: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    /// Replicates per row (M).
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Args)]
struct EffectsArgs {
    #[arg(long)]
    draws: Option<PathBuf>,
    /// `ppc_report.toml` written by `check`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Estimate effects even though the check failed or is missing.
    #[arg(long)]
    override_gate: bool,
    /// `column=value`, repeatable; together they form one intervention.
    #[arg(long = "set")]
    set: Vec<String>,
    /// Label of the `--set` intervention.
    #[arg(long, default_value = "set")]
    label: String,
    /// TOML file with `[[interventions]]` and `[[contrasts]]` tables.
    #[arg(long)]
    interventions: Option<PathBuf>,
    /// Intervention values are in raw cause units.
    #[arg(long)]
    raw_units: bool,
    #[arg(long)]
    outcome_max: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    n_sims: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
}

fn parse_kind(s: &str) -> std::result::Result<PlfmKind, String> {
    match s {
        "ppca" => Ok(PlfmKind::Ppca),
        "bpmf" => Ok(PlfmKind::Bpmf),
        _ => Err(format!("unknown model `{s}` (ppca or bpmf)")),
    }
}

fn parse_ratio(s: &str) -> Result<[f64; 2]> {
    let bad = || Error::Config(format!("ratio must look like `3/2`, got `{s}`"));
    let (a, b) = s.split_once('/').ok_or_else(bad)?;
    Ok([a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?])
}

fn set_if<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_data(cfg: &mut RunConfig, a: &DataArgs) -> Result<()> {
    if a.data.is_some() {
        cfg.data.path = a.data.clone();
    }
    if a.roles.is_some() {
        cfg.data.roles_file = a.roles.clone();
    }
    for (col, role) in RoleSpec::parse_pairs(&a.role)?.iter() {
        cfg.data.roles.insert(col.to_string(), role);
    }
    Ok(())
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set_if(&mut cfg.seed, cli.seed);
    set_if(&mut cfg.out_dir, cli.out.clone());
    match &cli.command {
        Command::Simulate(a) => {
            set_if(&mut cfg.simulate.n, a.n);
            set_if(&mut cfg.simulate.d, a.d);
            if let Some(r) = &a.ratio {
                cfg.simulate.ratio = parse_ratio(r)?;
            }
            cfg.simulate.use_data |= a.use_data;
            apply_data(&mut cfg, &a.data)?;
        }
        Command::Fit(a) => {
            apply_data(&mut cfg, &a.data)?;
            let m = &mut cfg.model;
            if let Some(k) = a.kind {
                if k != m.kind {
                    m.hierarchy = None;
                }
                m.kind = k;
            }
            set_if(&mut m.latent_dim, a.latent_dim);
            set_if(&mut m.chain.n_warmup, a.warmup);
            set_if(&mut m.chain.n_samples, a.samples);
            set_if(&mut m.chain.thin, a.thin);
            set_if(&mut m.hold_fraction, a.hold_fraction);
        }
        Command::Check(a) => {
            if a.draws.is_some() {
                cfg.check.draws = a.draws.clone();
            }
            set_if(&mut cfg.check.tau, a.tau);
            set_if(&mut cfg.check.n_replicates, a.replicates);
        }
        Command::Effects(a) => {
            let e = &mut cfg.effects;
            if a.draws.is_some() {
                e.draws = a.draws.clone();
            }
            if a.report.is_some() {
                e.report = a.report.clone();
            }
            e.override_gate |= a.override_gate;
            e.raw_units |= a.raw_units;
            set_if(&mut e.outcome_max, a.outcome_max);
            set_if(&mut e.n_warmup, a.warmup);
            set_if(&mut e.n_samples, a.samples);
            if let Some(p) = &a.interventions {
                let f = InterventionsFile::load(p)?;
                e.interventions.extend(f.interventions);
                e.contrasts.extend(f.contrasts);
            }
            if !a.set.is_empty() {
                let set = a
                    .set
                    .iter()
                    .map(|s| Intervention::parse_assignment(s))
                    .collect::<Result<_>>()?;
                e.interventions.push(InterventionSpec {
                    label: a.label.clone(),
                    set,
                });
            }
        }
        Command::Benchmark(a) => {
            let b = &mut cfg.benchmark;
            set_if(&mut b.n_sims, a.n_sims);
            set_if(&mut b.n, a.n);
            set_if(&mut b.d, a.d);
        }
        Command::Config => {}
    }
    cfg.resolve()
}

fn run(cli: &Cli) -> Result<i32> {
    let cfg = resolve(cli)?;
    let written = match &cli.command {
        Command::Simulate(_) => commands::simulate(&cfg)?,
        Command::Fit(_) => commands::fit(&cfg)?,
        Command::Check(_) => {
            let out = commands::check(&cfg)?;
            for p in &out.written {
                println!("{}", p.display());
            }
            if !out.passed {
                // the report is written either way; the exit code carries the gate
                eprintln!("error: {}", Error::GateFailed { mean_p: out.mean_p, tau: out.tau });
                return Ok(4);
            }
            println!("check passed: mean p-value {:.4} > tau = {}", out.mean_p, out.tau);
            return Ok(0);
        }
        Command::Effects(_) => commands::effects(&cfg)?,
        Command::Benchmark(_) => commands::benchmark(&cfg)?,
        Command::Config => {
            print!("{}", cfg.to_toml());
            return Ok(0);
        }
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(0)
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Usage => 1,
        ErrorCategory::Data => 2,
        ErrorCategory::Numerical => 3,
        ErrorCategory::Gate => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
