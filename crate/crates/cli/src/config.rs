//! Run configuration: one TOML file covering every subcommand.
//!
//! Unknown keys are rejected. Every field has a default, so an empty file
//! (or no file) is a valid configuration; command-line flags are applied on
//! top of the file.
//!
//! # Seeds
//!
//! All randomness comes from the master `seed`. Each stage uses
//! `derive_seed(seed, stage, 0)` with the stage names below, so re-running
//! one stage never shifts the streams of another:
//!
//! | stage      | name          |
//! |------------|---------------|
//! | simulate   | `"simulate"`  |
//! | holdout    | `"holdout"`   |
//! | PLFM chain | `"plfm"`      |
//! | check      | `"ppc"`       |
//! | outcome    | `"outcome"`   |
//! | benchmark  | `"benchmark"` |
//!
//! The benchmark seed is masked to 63 bits so that it can be echoed as a
//! TOML integer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use deconfounder::data::{Role, RoleSpec};
use deconfounder::outcome::BetaPrior;
use deconfounder::plfm::{ChainSettings, Hierarchy, InverseGammaPrior, PlfmKind, PlfmSpec};
use deconfounder::rng::derive_seed;
use deconfounder::synth::{BenchmarkConfig, SurrogateConfig, SynthConfig};
use deconfounder::{Error, Result};
use serde::{Deserialize, Serialize};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Version of the program that resolved the configuration.
    pub version: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub simulate: SimulateSection,
    pub model: ModelSection,
    pub check: CheckSection,
    pub effects: EffectsSection,
    pub benchmark: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: VERSION.to_string(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataSection::default(),
            simulate: SimulateSection::default(),
            model: ModelSection::default(),
            check: CheckSection::default(),
            effects: EffectsSection::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// Column name to role; merged with `roles_file` (inline wins).
    pub roles: BTreeMap<String, Role>,
    pub roles_file: Option<PathBuf>,
    /// Divide volume causes by TIV when a `tiv` column is declared.
    pub normalize_tiv: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            roles: BTreeMap::new(),
            roles_file: None,
            normalize_tiv: true,
        }
    }
}

impl DataSection {
    pub fn role_spec(&self) -> Result<RoleSpec> {
        let mut spec = match &self.roles_file {
            Some(p) => RoleSpec::load(p)?,
            None => RoleSpec::new(),
        };
        for (col, role) in &self.roles {
            spec.insert(col.clone(), *role);
        }
        if spec.is_empty() {
            return Err(Error::Config("no column roles given (data.roles, data.roles_file or --role)".into()));
        }
        Ok(spec)
    }

    pub fn path(&self) -> Result<&Path> {
        self.path
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset given (data.path or --data)".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// Take causes and covariates from `[data]` instead of the surrogate
    /// generator. The dataset must declare an `age` column.
    pub use_data: bool,
    pub n: usize,
    pub d: usize,
    /// `ν_x : ν_z`.
    pub ratio: [f64; 2],
    pub nu_eps: f64,
    pub n_clusters: usize,
    pub sparse_band: (f64, f64),
    pub effect_scale: f64,
    pub age_coef_scale: f64,
    pub surrogate: SurrogateConfig,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        SimulateSection {
            use_data: false,
            n: 2000,
            d: 19,
            ratio: [1.0, 1.0],
            nu_eps: 0.1,
            n_clusters: s.n_clusters,
            sparse_band: s.sparse_band,
            effect_scale: s.effect_scale,
            age_coef_scale: s.age_coef_scale,
            surrogate: SurrogateConfig::default(),
        }
    }
}

impl SimulateSection {
    pub fn synth_config(&self, seed: u64) -> Result<SynthConfig> {
        let base = SynthConfig::from_ratio(self.ratio[0], self.ratio[1], self.nu_eps)?;
        let cfg = SynthConfig {
            n_clusters: self.n_clusters,
            sparse_band: self.sparse_band,
            effect_scale: self.effect_scale,
            age_coef_scale: self.age_coef_scale,
            seed,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: PlfmKind,
    pub latent_dim: usize,
    pub prior_scale_loadings: f64,
    pub prior_scale_coefficients: f64,
    pub noise_prior: InverseGammaPrior,
    /// BPMF hyperpriors; filled with the defaults when the kind is BPMF.
    pub hierarchy: Option<Hierarchy>,
    pub chain: ChainSettings,
    /// Share of cause cells held out for the predictive check.
    pub hold_fraction: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let spec = PlfmSpec::new(PlfmKind::Ppca, 5, 0);
        ModelSection {
            kind: spec.kind,
            latent_dim: spec.latent_dim,
            prior_scale_loadings: spec.prior_scale_loadings,
            prior_scale_coefficients: spec.prior_scale_coefficients,
            noise_prior: spec.noise_prior,
            hierarchy: None,
            chain: ChainSettings::default(),
            hold_fraction: 0.2,
        }
    }
}

impl ModelSection {
    pub fn spec(&self, seed: u64) -> PlfmSpec {
        PlfmSpec {
            kind: self.kind,
            latent_dim: self.latent_dim,
            prior_scale_loadings: self.prior_scale_loadings,
            prior_scale_coefficients: self.prior_scale_coefficients,
            noise_prior: self.noise_prior,
            hierarchy: self.hierarchy,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    /// Draws file; defaults to `<out_dir>/draws.bin`.
    pub draws: Option<PathBuf>,
    pub n_replicates: usize,
    pub tau: f64,
    pub max_statistic_draws: Option<usize>,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            draws: None,
            n_replicates: 200,
            tau: 0.1,
            max_statistic_draws: None,
        }
    }
}

/// A named intervention `do(column = value, ...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionSpec {
    pub label: String,
    pub set: BTreeMap<String, f64>,
}

/// `ACE(a) - ACE(b)` between two labelled interventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastSpec {
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EffectsSection {
    /// Draws file; defaults to `<out_dir>/draws.bin`.
    pub draws: Option<PathBuf>,
    /// Check report (`ppc_report.toml`) that gates the estimation.
    pub report: Option<PathBuf>,
    pub override_gate: bool,
    /// Outcome range `[0, outcome_max]`, mapped into (0, 1) for the Beta
    /// regression. 85 is the ADAS-Cog 13 maximum.
    pub outcome_max: f64,
    /// Covariates kept in the outcome model besides age.
    pub extra_covariates: Vec<String>,
    pub prior: BetaPrior,
    pub n_warmup: usize,
    pub n_samples: usize,
    pub thin: usize,
    /// Intervention values are in raw cause units rather than standardized.
    pub raw_units: bool,
    pub interventions: Vec<InterventionSpec>,
    pub contrasts: Vec<ContrastSpec>,
}

impl Default for EffectsSection {
    fn default() -> Self {
        EffectsSection {
            draws: None,
            report: None,
            override_gate: false,
            outcome_max: 85.0,
            extra_covariates: Vec::new(),
            prior: BetaPrior::default(),
            n_warmup: 1000,
            n_samples: 2000,
            thin: 1,
            raw_units: false,
            interventions: Vec::new(),
            contrasts: Vec::new(),
        }
    }
}

/// Interventions file: `[[interventions]]` tables as in the main config.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionsFile {
    #[serde(default)]
    pub interventions: Vec<InterventionSpec>,
    #[serde(default)]
    pub contrasts: Vec<ContrastSpec>,
}

impl InterventionsFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != VERSION {
            log::warn!("configuration was written by version {}, running {VERSION}", cfg.version);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_text(path)?)
    }

    /// Fills derived values so the echoed configuration is complete.
    pub fn resolve(mut self) -> Result<Self> {
        self.version = VERSION.to_string();
        if self.model.kind == PlfmKind::Bpmf && self.model.hierarchy.is_none() {
            self.model.hierarchy = Some(Hierarchy::default());
        }
        // stage seeds come from the master seed; an echoed configuration
        // carries the derived value and is accepted back
        // TOML integers are signed, so the echoed seed keeps 63 bits
        let derived = self.stage_seed("benchmark") & (i64::MAX as u64);
        if (self.benchmark.seed != 0 && self.benchmark.seed != derived) || self.benchmark.ppc.seed != 0 {
            return Err(Error::Config(
                "benchmark seeds are derived from the top-level `seed`; remove benchmark.seed and benchmark.ppc.seed".into(),
            ));
        }
        self.benchmark.seed = derived;
        Ok(self)
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage, 0)
    }

    pub fn draws_path(&self, explicit: &Option<PathBuf>) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out_dir.join("draws.bin"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn to_value(&self) -> toml::Value {
        toml::Value::try_from(self).expect("configuration serializes")
    }
}
