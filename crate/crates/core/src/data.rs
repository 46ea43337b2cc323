//! Tabular ingestion, column roles, TIV normalization, standardization and
//! the entry-wise holdout split that feeds model checking.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// What a column of the input table is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    CauseVolume,
    CauseThickness,
    Covariate,
    Outcome,
    Tiv,
    /// A covariate that is additionally the observed confounder kept in the
    /// outcome regression.
    Age,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::CauseVolume => "cause-volume",
            Role::CauseThickness => "cause-thickness",
            Role::Covariate => "covariate",
            Role::Outcome => "outcome",
            Role::Tiv => "tiv",
            Role::Age => "age",
        }
    }

    pub fn parse(s: &str) -> Result<Role> {
        Ok(match s {
            "cause-volume" => Role::CauseVolume,
            "cause-thickness" => Role::CauseThickness,
            "covariate" => Role::Covariate,
            "outcome" => Role::Outcome,
            "tiv" => Role::Tiv,
            "age" => Role::Age,
            other => return Err(Error::Roles(format!("unknown role `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CauseKind {
    Volume,
    Thickness,
}

/// Column-name → role declarations. Columns of the table that are not
/// declared are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleSpec {
    roles: BTreeMap<String, Role>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoleFile {
    roles: BTreeMap<String, Role>,
}

impl RoleSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, column: impl Into<String>, role: Role) -> Self {
        self.insert(column, role);
        self
    }

    pub fn insert(&mut self, column: impl Into<String>, role: Role) {
        self.roles.insert(column.into(), role);
    }

    pub fn get(&self, column: &str) -> Option<Role> {
        self.roles.get(column).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Role)> {
        self.roles.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    /// Parses `column=role` pairs, as given on the command line.
    pub fn parse_pairs<S: AsRef<str>>(pairs: &[S]) -> Result<Self> {
        let mut spec = RoleSpec::new();
        for pair in pairs {
            let pair = pair.as_ref();
            let (col, role) = pair
                .split_once('=')
                .ok_or_else(|| Error::Roles(format!("expected column=role, got `{pair}`")))?;
            spec.insert(col.trim(), Role::parse(role.trim())?);
        }
        Ok(spec)
    }

    /// Reads a TOML role file of the form
    ///
    /// ```toml
    /// [roles]
    /// hippocampus = "cause-volume"
    /// age = "age"
    /// adas = "outcome"
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: RoleFile =
            toml::from_str(text).map_err(|e| Error::Roles(format!("role file: {e}")))?;
        Ok(RoleSpec { roles: file.roles })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let mut out = String::from("[roles]\n");
        for (col, role) in &self.roles {
            out.push_str(&format!("{} = \"{}\"\n", toml_key(col), role.as_str()));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let outcomes = self.roles.values().filter(|r| **r == Role::Outcome).count();
        if outcomes != 1 {
            return Err(Error::Roles(format!(
                "exactly one column must have role `outcome`, found {outcomes}"
            )));
        }
        if self.roles.values().filter(|r| **r == Role::Tiv).count() > 1 {
            return Err(Error::Roles("at most one column may have role `tiv`".into()));
        }
        if self.roles.values().filter(|r| **r == Role::Age).count() > 1 {
            return Err(Error::Roles("at most one column may have role `age`".into()));
        }
        Ok(())
    }
}

fn toml_key(key: &str) -> String {
    if !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        key.to_string()
    } else {
        format!("\"{}\"", key.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

/// Causes, covariates and outcome of N individuals.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    causes: Array2<T>,
    cause_names: Vec<String>,
    cause_kinds: Vec<CauseKind>,
    covariates: Array2<T>,
    covariate_names: Vec<String>,
    age_column: Option<usize>,
    outcome: Array1<T>,
    outcome_name: String,
    tiv: Option<Array1<T>>,
    tiv_name: Option<String>,
}

/// Named columns for [`Dataset::new`].
#[derive(Debug, Clone)]
pub struct DatasetParts<T> {
    pub causes: Array2<T>,
    pub cause_names: Vec<String>,
    pub cause_kinds: Vec<CauseKind>,
    pub covariates: Array2<T>,
    pub covariate_names: Vec<String>,
    pub age_column: Option<usize>,
    pub outcome: Array1<T>,
    pub outcome_name: String,
    pub tiv: Option<Array1<T>>,
    pub tiv_name: Option<String>,
}

impl<T: Real> Dataset<T> {
    pub fn new(parts: DatasetParts<T>) -> Result<Self> {
        let n = parts.causes.nrows();
        let d = parts.causes.ncols();
        if n == 0 {
            return Err(Error::Shape("dataset has no rows".into()));
        }
        if d == 0 {
            return Err(Error::Shape("dataset has no cause columns".into()));
        }
        if parts.cause_names.len() != d || parts.cause_kinds.len() != d {
            return Err(Error::Shape("cause names/kinds do not match cause columns".into()));
        }
        if parts.covariates.nrows() != n || parts.covariate_names.len() != parts.covariates.ncols()
        {
            return Err(Error::Shape("covariate matrix does not match row count or names".into()));
        }
        if parts.outcome.len() != n {
            return Err(Error::Shape("outcome length differs from row count".into()));
        }
        if let Some(a) = parts.age_column {
            if a >= parts.covariates.ncols() {
                return Err(Error::Shape("age column index out of range".into()));
            }
        }
        if let Some(t) = &parts.tiv {
            if t.len() != n {
                return Err(Error::Shape("tiv length differs from row count".into()));
            }
        }
        let finite = parts.causes.iter().all(|v| v.is_finite())
            && parts.covariates.iter().all(|v| v.is_finite())
            && parts.outcome.iter().all(|v| v.is_finite())
            && parts.tiv.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(Dataset {
            causes: parts.causes,
            cause_names: parts.cause_names,
            cause_kinds: parts.cause_kinds,
            covariates: parts.covariates,
            covariate_names: parts.covariate_names,
            age_column: parts.age_column,
            outcome: parts.outcome,
            outcome_name: parts.outcome_name,
            tiv: parts.tiv,
            tiv_name: parts.tiv_name,
        })
    }

    pub fn into_parts(self) -> DatasetParts<T> {
        DatasetParts {
            causes: self.causes,
            cause_names: self.cause_names,
            cause_kinds: self.cause_kinds,
            covariates: self.covariates,
            covariate_names: self.covariate_names,
            age_column: self.age_column,
            outcome: self.outcome,
            outcome_name: self.outcome_name,
            tiv: self.tiv,
            tiv_name: self.tiv_name,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.causes.nrows()
    }

    pub fn n_causes(&self) -> usize {
        self.causes.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn causes(&self) -> ArrayView2<'_, T> {
        self.causes.view()
    }

    pub fn covariates(&self) -> ArrayView2<'_, T> {
        self.covariates.view()
    }

    pub fn outcome(&self) -> ArrayView1<'_, T> {
        self.outcome.view()
    }

    pub fn tiv(&self) -> Option<ArrayView1<'_, T>> {
        self.tiv.as_ref().map(|t| t.view())
    }

    pub fn cause_names(&self) -> &[String] {
        &self.cause_names
    }

    pub fn cause_kinds(&self) -> &[CauseKind] {
        &self.cause_kinds
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn age_column(&self) -> Option<usize> {
        self.age_column
    }

    pub fn age(&self) -> Option<ArrayView1<'_, T>> {
        self.age_column.map(|j| self.covariates.column(j))
    }

    pub fn cause_index(&self, name: &str) -> Option<usize> {
        self.cause_names.iter().position(|c| c == name)
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Same dataset with the cause matrix replaced.
    pub fn with_causes(&self, causes: Array2<T>) -> Result<Self> {
        let mut parts = self.clone().into_parts();
        parts.causes = causes;
        Dataset::new(parts)
    }

    /// Role declarations reproducing this dataset's column layout.
    pub fn role_spec(&self) -> RoleSpec {
        let mut spec = RoleSpec::new();
        for (name, kind) in self.cause_names.iter().zip(&self.cause_kinds) {
            let role = match kind {
                CauseKind::Volume => Role::CauseVolume,
                CauseKind::Thickness => Role::CauseThickness,
            };
            spec.insert(name.clone(), role);
        }
        for (j, name) in self.covariate_names.iter().enumerate() {
            let role = if Some(j) == self.age_column {
                Role::Age
            } else {
                Role::Covariate
            };
            spec.insert(name.clone(), role);
        }
        spec.insert(self.outcome_name.clone(), Role::Outcome);
        if let Some(t) = &self.tiv_name {
            spec.insert(t.clone(), Role::Tiv);
        }
        spec
    }
}

fn sniff_delimiter(path: &Path, header: &str) -> u8 {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    if matches!(ext.as_deref(), Some("tsv") | Some("tab")) {
        return b'\t';
    }
    if header.contains('\t') && !header.contains(',') {
        b'\t'
    } else {
        b','
    }
}

fn first_data_line(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.starts_with('#') && !line.trim().is_empty() {
            return Ok(line);
        }
    }
    Err(Error::Csv {
        path: path.to_path_buf(),
        message: "file has no header row".into(),
    })
}

fn parse_cell<T: Real>(raw: &str, line: u64, column: &str) -> Result<T> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::Cell {
            line,
            column: column.to_string(),
            message: "missing value".into(),
        });
    }
    let v: T = trimmed.parse().map_err(|_| Error::Cell {
        line,
        column: column.to_string(),
        message: format!("`{trimmed}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Cell {
            line,
            column: column.to_string(),
            message: format!("`{trimmed}` is not a finite number"),
        });
    }
    Ok(v)
}

/// Reads a delimited table with a header row and partitions its columns by
/// role. Lines starting with `#` are comments. Numeric parsing is strict:
/// empty cells, non-numeric text and non-finite values (`NaN`, `inf`) are
/// rejected with the offending line and column.
pub fn load_dataset<T: Real>(path: &Path, roles: &RoleSpec) -> Result<Dataset<T>> {
    roles.validate()?;
    let header_line = first_data_line(path)?;
    let delimiter = sniff_delimiter(path, &header_line);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(file);
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        if index.insert(h.as_str(), i).is_some() {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                message: format!("duplicate column `{h}`"),
            });
        }
    }
    for (col, _) in roles.iter() {
        if !index.contains_key(col) {
            return Err(Error::MissingColumn(col.to_string()));
        }
    }

    // Columns in header order.
    let mut cause_cols = Vec::new();
    let mut cov_cols = Vec::new();
    let mut age_column = None;
    let mut outcome_col = 0;
    let mut tiv_col = None;
    for (i, name) in header.iter().enumerate() {
        match roles.get(name) {
            Some(Role::CauseVolume) => cause_cols.push((i, CauseKind::Volume)),
            Some(Role::CauseThickness) => cause_cols.push((i, CauseKind::Thickness)),
            Some(Role::Covariate) => cov_cols.push(i),
            Some(Role::Age) => {
                age_column = Some(cov_cols.len());
                cov_cols.push(i);
            }
            Some(Role::Outcome) => outcome_col = i,
            Some(Role::Tiv) => tiv_col = Some(i),
            None => {}
        }
    }
    if cause_cols.is_empty() {
        return Err(Error::Roles("no column has a cause role".into()));
    }

    let mut causes = Vec::new();
    let mut covs = Vec::new();
    let mut outcome = Vec::new();
    let mut tiv = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                message: format!(
                    "line {line} has {} fields, header has {}",
                    record.len(),
                    header.len()
                ),
            });
        }
        for &(c, _) in &cause_cols {
            causes.push(parse_cell::<T>(&record[c], line, &header[c])?);
        }
        for &c in &cov_cols {
            covs.push(parse_cell::<T>(&record[c], line, &header[c])?);
        }
        outcome.push(parse_cell::<T>(&record[outcome_col], line, &header[outcome_col])?);
        if let Some(c) = tiv_col {
            tiv.push(parse_cell::<T>(&record[c], line, &header[c])?);
        }
    }
    let n = outcome.len();
    let parts = DatasetParts {
        causes: Array2::from_shape_vec((n, cause_cols.len()), causes).expect("row-major causes"),
        cause_names: cause_cols.iter().map(|&(c, _)| header[c].clone()).collect(),
        cause_kinds: cause_cols.iter().map(|&(_, k)| k).collect(),
        covariates: Array2::from_shape_vec((n, cov_cols.len()), covs).expect("row-major covariates"),
        covariate_names: cov_cols.iter().map(|&c| header[c].clone()).collect(),
        age_column,
        outcome: Array1::from(outcome),
        outcome_name: header[outcome_col].clone(),
        tiv: tiv_col.map(|_| Array1::from(tiv)),
        tiv_name: tiv_col.map(|c| header[c].clone()),
    };
    Dataset::new(parts)
}

/// Writes the dataset as comma-separated text. Values use Rust's shortest
/// round-trip float formatting, so [`load_dataset`] recovers them exactly.
/// `preamble` lines are written as `#` comments before the header.
pub fn write_dataset<T: Real>(ds: &Dataset<T>, path: &Path, preamble: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for line in preamble {
        writeln!(w, "# {line}").map_err(io)?;
    }
    let mut header: Vec<&str> = ds.cause_names.iter().map(String::as_str).collect();
    header.extend(ds.covariate_names.iter().map(String::as_str));
    header.push(&ds.outcome_name);
    if let Some(t) = &ds.tiv_name {
        header.push(t);
    }
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for i in 0..ds.n_rows() {
        line.clear();
        let mut first = true;
        let mut push = |v: T, line: &mut String| {
            if !first {
                line.push(',');
            }
            first = false;
            line.push_str(&v.to_string());
        };
        for &v in ds.causes.row(i) {
            push(v, &mut line);
        }
        for &v in ds.covariates.row(i) {
            push(v, &mut line);
        }
        push(ds.outcome[i], &mut line);
        if let Some(t) = &ds.tiv {
            push(t[i], &mut line);
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Divides every volume cause by total intracranial volume; thickness causes
/// are left untouched and the TIV column is dropped afterwards.
pub fn normalize_by_tiv<T: Real>(ds: &Dataset<T>) -> Result<Dataset<T>> {
    let tiv = ds
        .tiv
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("dataset has no `tiv` column".into()))?;
    if let Some(i) = tiv.iter().position(|&t| !(t > T::zero())) {
        return Err(Error::InvalidArgument(format!(
            "tiv must be strictly positive; row {} has {}",
            i + 1,
            tiv[i]
        )));
    }
    if !ds.cause_kinds.contains(&CauseKind::Volume) {
        return Err(Error::InvalidArgument(
            "no cause has role `cause-volume`; nothing to normalize".into(),
        ));
    }
    let mut causes = ds.causes.clone();
    for (j, kind) in ds.cause_kinds.iter().enumerate() {
        if *kind == CauseKind::Volume {
            let mut col = causes.column_mut(j);
            col.zip_mut_with(tiv, |x, &t| *x = *x / t);
        }
    }
    let mut parts = ds.clone().into_parts();
    parts.causes = causes;
    parts.tiv = None;
    parts.tiv_name = None;
    Dataset::new(parts)
}

/// Per-column location and scale of an affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization<T> {
    pub cause_location: Vec<T>,
    pub cause_scale: Vec<T>,
    pub covariate_location: Vec<T>,
    pub covariate_scale: Vec<T>,
    /// Names of constant columns, which were given scale 1.
    pub degenerate: Vec<String>,
}

fn column_moments<T: Real>(col: ArrayView1<'_, T>) -> (T, T) {
    let n = T::of_usize(col.len());
    let mean = col.sum() / n;
    if col.len() < 2 {
        return (mean, T::zero());
    }
    let ss: T = col.iter().map(|&x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - T::one())).sqrt())
}

fn standardize_matrix<T: Real>(
    m: &Array2<T>,
    names: &[String],
    degenerate: &mut Vec<String>,
) -> (Array2<T>, Vec<T>, Vec<T>) {
    let mut out = m.clone();
    let mut loc = Vec::with_capacity(m.ncols());
    let mut scale = Vec::with_capacity(m.ncols());
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let (mean, sd) = column_moments(m.column(j));
        let sd = if sd > T::zero() {
            sd
        } else {
            warn!("column `{}` is constant; using scale 1", names[j]);
            degenerate.push(names[j].clone());
            T::one()
        };
        col.mapv_inplace(|x| (x - mean) / sd);
        loc.push(mean);
        scale.push(sd);
    }
    (out, loc, scale)
}

/// Centers every cause and covariate column to sample mean 0 and scales it to
/// sample standard deviation 1 (n-1 denominator). Constant columns are
/// centered, given scale 1 and reported in [`Standardization::degenerate`].
/// The outcome and TIV are left as they are.
pub fn standardize<T: Real>(ds: &Dataset<T>) -> (Dataset<T>, Standardization<T>) {
    let mut degenerate = Vec::new();
    let (causes, cl, cs) = standardize_matrix(&ds.causes, &ds.cause_names, &mut degenerate);
    let (covs, fl, fs) = standardize_matrix(&ds.covariates, &ds.covariate_names, &mut degenerate);
    let mut out = ds.clone();
    out.causes = causes;
    out.covariates = covs;
    (
        out,
        Standardization {
            cause_location: cl,
            cause_scale: cs,
            covariate_location: fl,
            covariate_scale: fs,
            degenerate,
        },
    )
}

impl<T: Real> Standardization<T> {
    /// Applies the stored transform to another dataset with the same layout.
    pub fn apply(&self, ds: &Dataset<T>) -> Result<Dataset<T>> {
        self.check_layout(ds)?;
        let mut out = ds.clone();
        affine(&mut out.causes, &self.cause_location, &self.cause_scale, false);
        affine(&mut out.covariates, &self.covariate_location, &self.covariate_scale, false);
        Ok(out)
    }

    /// Maps a standardized dataset back to original units.
    pub fn invert(&self, ds: &Dataset<T>) -> Result<Dataset<T>> {
        self.check_layout(ds)?;
        let mut out = ds.clone();
        affine(&mut out.causes, &self.cause_location, &self.cause_scale, true);
        affine(&mut out.covariates, &self.covariate_location, &self.covariate_scale, true);
        Ok(out)
    }

    /// Raw value of cause `j` expressed in standardized units.
    pub fn cause_to_standard(&self, j: usize, raw: T) -> T {
        (raw - self.cause_location[j]) / self.cause_scale[j]
    }

    pub fn cause_from_standard(&self, j: usize, z: T) -> T {
        z * self.cause_scale[j] + self.cause_location[j]
    }

    fn check_layout(&self, ds: &Dataset<T>) -> Result<()> {
        if ds.n_causes() != self.cause_scale.len() || ds.n_covariates() != self.covariate_scale.len()
        {
            return Err(Error::Shape("standardization does not match dataset columns".into()));
        }
        Ok(())
    }
}

fn affine<T: Real>(m: &mut Array2<T>, loc: &[T], scale: &[T], inverse: bool) {
    for (j, mut col) in m.axis_iter_mut(Axis(1)).enumerate() {
        let (l, s) = (loc[j], scale[j]);
        if inverse {
            col.mapv_inplace(|x| x * s + l);
        } else {
            col.mapv_inplace(|x| (x - l) / s);
        }
    }
}

/// Binary holdout matrix `H` (true = held out).
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutMask {
    pub mask: Array2<bool>,
    pub hold_fraction: f64,
    pub seed: u64,
}

impl HoldoutMask {
    pub fn n_held(&self) -> usize {
        self.mask.iter().filter(|&&h| h).count()
    }

    pub fn fraction_held(&self) -> f64 {
        self.n_held() as f64 / self.mask.len() as f64
    }
}

/// A matrix together with an explicit presence mask. Entries whose mask is
/// `false` carry no information and are never read by the models.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix<T> {
    values: Array2<T>,
    observed: Array2<bool>,
}

/// One row of a [`MaskedMatrix`].
#[derive(Debug, Clone, Copy)]
pub struct MaskedRow<'a, T> {
    pub values: ArrayView1<'a, T>,
    pub observed: ArrayView1<'a, bool>,
}

impl<'a, T: Real> MaskedRow<'a, T> {
    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        self.observed
            .iter()
            .enumerate()
            .filter_map(|(j, &o)| o.then_some(j))
            .collect()
    }
}

impl<T: Real> MaskedMatrix<T> {
    pub fn new(values: Array2<T>, observed: Array2<bool>) -> Result<Self> {
        if values.dim() != observed.dim() {
            return Err(Error::Shape("values and mask differ in shape".into()));
        }
        let bad = values
            .iter()
            .zip(observed.iter())
            .any(|(v, &o)| o && !v.is_finite());
        if bad {
            return Err(Error::InvalidArgument("observed entries must be finite".into()));
        }
        Ok(MaskedMatrix { values, observed })
    }

    /// Every entry observed.
    pub fn fully_observed(values: Array2<T>) -> Result<Self> {
        let observed = Array2::from_elem(values.dim(), true);
        Self::new(values, observed)
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn observed(&self) -> ArrayView2<'_, bool> {
        self.observed.view()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> MaskedRow<'_, T> {
        MaskedRow {
            values: self.values.row(i),
            observed: self.observed.row(i),
        }
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[[i, j]]
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }
}

/// Splits `x` into `X_obs = (1 - H) ⊙ X` and `X_holdout = H ⊙ X` for a random
/// entry-wise holdout mask `H`.
///
/// Exactly `round(hold_fraction · N · D)` cells are held out, chosen
/// uniformly without replacement; rows that would lose every entry are then
/// repaired by trading one of their cells with an observed cell of another
/// row, keeping the count fixed. Held-out cells of `X_obs` (and observed
/// cells of `X_holdout`) store zero and are masked.
pub fn split_holdout_matrix<T: Real>(
    x: ArrayView2<'_, T>,
    hold_fraction: f64,
    seed: u64,
) -> Result<(MaskedMatrix<T>, MaskedMatrix<T>, HoldoutMask)> {
    if !(hold_fraction > 0.0 && hold_fraction < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "hold_fraction must lie in (0, 0.5), got {hold_fraction}"
        )));
    }
    let (n, d) = x.dim();
    let cells = n * d;
    let n_hold = ((hold_fraction * cells as f64).round() as usize).max(1);
    if n_hold > n * (d.saturating_sub(1)) {
        return Err(Error::InvalidArgument(format!(
            "cannot hold out {n_hold} of {cells} cells while keeping one observed cell per row (D = {d})"
        )));
    }
    let mut rng = rng::stream(seed);
    let mut order: Vec<usize> = (0..cells).collect();
    let (chosen, _) = order.partial_shuffle(&mut rng, n_hold);
    let mut mask = Array2::from_elem((n, d), false);
    for &c in chosen.iter() {
        mask[[c / d, c % d]] = true;
    }
    let mut held_per_row: Vec<usize> = mask
        .rows()
        .into_iter()
        .map(|r| r.iter().filter(|&&h| h).count())
        .collect();
    for i in 0..n {
        if held_per_row[i] < d {
            continue;
        }
        // Release one cell of row i and hold a cell of a row that keeps
        // at least one observed entry afterwards.
        let release = rng.random_range(0..d);
        mask[[i, release]] = false;
        held_per_row[i] -= 1;
        let mut placed = false;
        for _ in 0..(64 * cells) {
            let c = rng.random_range(0..cells);
            let (r, j) = (c / d, c % d);
            if r != i && !mask[[r, j]] && held_per_row[r] + 1 < d {
                mask[[r, j]] = true;
                held_per_row[r] += 1;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Numerical("could not repair holdout mask".into()));
        }
    }
    let observed = mask.mapv(|h| !h);
    let mut obs_values = x.to_owned();
    let mut hold_values = x.to_owned();
    obs_values.zip_mut_with(&mask, |v, &h| {
        if h {
            *v = T::zero()
        }
    });
    hold_values.zip_mut_with(&mask, |v, &h| {
        if !h {
            *v = T::zero()
        }
    });
    Ok((
        MaskedMatrix::new(obs_values, observed)?,
        MaskedMatrix::new(hold_values, mask.clone())?,
        HoldoutMask {
            mask,
            hold_fraction,
            seed,
        },
    ))
}

/// [`split_holdout_matrix`] applied to the dataset's causes.
pub fn split_holdout<T: Real>(
    ds: &Dataset<T>,
    hold_fraction: f64,
    seed: u64,
) -> Result<(MaskedMatrix<T>, MaskedMatrix<T>, HoldoutMask)> {
    split_holdout_matrix(ds.causes(), hold_fraction, seed)
}

/// Rebuilds the observed/held-out pair from a stored mask.
pub fn apply_holdout_mask<T: Real>(
    x: ArrayView2<'_, T>,
    mask: &Array2<bool>,
) -> Result<(MaskedMatrix<T>, MaskedMatrix<T>)> {
    if x.dim() != mask.dim() {
        return Err(Error::Shape("holdout mask does not match cause matrix".into()));
    }
    let mut obs = x.to_owned();
    let mut hold = x.to_owned();
    obs.zip_mut_with(mask, |v, &h| {
        if h {
            *v = T::zero()
        }
    });
    hold.zip_mut_with(mask, |v, &h| {
        if !h {
            *v = T::zero()
        }
    });
    Ok((
        MaskedMatrix::new(obs, mask.mapv(|h| !h))?,
        MaskedMatrix::new(hold, mask.clone())?,
    ))
}
