//! Trial datasets and design-matrix construction.
//!
//! Unshrunken categorical terms are dummy encoded (the first declared level is
//! absorbed into the intercept); shrunken terms are one-hot encoded so every
//! level is treated symmetrically. Predictive columns are subgroup indicators
//! multiplied by the treatment indicator.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::{PriorConfig, PrognosticPrior};

/// A categorical column: declared levels plus one level code per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalVar {
    pub name: String,
    pub levels: Vec<String>,
    pub codes: Vec<usize>,
}

impl CategoricalVar {
    pub fn new(name: impl Into<String>, levels: Vec<String>, codes: Vec<usize>) -> Result<Self> {
        let name = name.into();
        if let Some(bad) = codes.iter().find(|&&c| c >= levels.len()) {
            return Err(Error::invalid(format!(
                "variable `{name}` has level code {bad} but only {} levels",
                levels.len()
            )));
        }
        Ok(Self {
            name,
            levels,
            codes,
        })
    }

    /// Levels are taken in order of first appearance.
    pub fn from_values<S: AsRef<str>>(name: impl Into<String>, values: &[S]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let codes = values
            .iter()
            .map(|v| {
                let v = v.as_ref();
                *index.entry(v.to_string()).or_insert_with(|| {
                    levels.push(v.to_string());
                    levels.len() - 1
                })
            })
            .collect();
        Self {
            name: name.into(),
            levels,
            codes,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.levels.len()];
        for &c in &self.codes {
            counts[c] += 1;
        }
        counts
    }

    pub fn level_index(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariate {
    Numeric { name: String, values: Vec<f64> },
    Categorical(CategoricalVar),
}

impl Covariate {
    pub fn name(&self) -> &str {
        match self {
            Covariate::Numeric { name, .. } => name,
            Covariate::Categorical(v) => &v.name,
        }
    }

    fn len(&self) -> usize {
        match self {
            Covariate::Numeric { values, .. } => values.len(),
            Covariate::Categorical(v) => v.codes.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Endpoint {
    Continuous(Vec<f64>),
    Binary(Vec<bool>),
    Count {
        counts: Vec<u64>,
        exposure: Option<Vec<f64>>,
    },
    TimeToEvent {
        time: Vec<f64>,
        event: Vec<bool>,
    },
}

impl Endpoint {
    fn len(&self) -> usize {
        match self {
            Endpoint::Continuous(y) => y.len(),
            Endpoint::Binary(y) => y.len(),
            Endpoint::Count { counts, .. } => counts.len(),
            Endpoint::TimeToEvent { time, .. } => time.len(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Endpoint::Continuous(_) => "continuous",
            Endpoint::Binary(_) => "binary",
            Endpoint::Count { .. } => "count",
            Endpoint::TimeToEvent { .. } => "time-to-event",
        }
    }
}

/// Identifies a single-variable subgroup (or the whole trial population).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubgroupId {
    Population,
    Level { variable: usize, level: usize },
}

/// Subjects of a randomized two-arm trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    treatment: Vec<bool>,
    subgroup_vars: Vec<CategoricalVar>,
    covariates: Vec<Covariate>,
    endpoint: Endpoint,
}

impl TrialDataset {
    pub fn new(
        treatment: Vec<bool>,
        subgroup_vars: Vec<CategoricalVar>,
        covariates: Vec<Covariate>,
        endpoint: Endpoint,
    ) -> Result<Self> {
        let n = treatment.len();
        if n == 0 {
            return Err(Error::invalid("dataset has no subjects"));
        }
        if endpoint.len() != n {
            return Err(Error::Dimension {
                context: "endpoint length",
                expected: n,
                got: endpoint.len(),
            });
        }
        for var in &subgroup_vars {
            if var.codes.len() != n {
                return Err(Error::Dimension {
                    context: "subgroup variable length",
                    expected: n,
                    got: var.codes.len(),
                });
            }
            let observed = var.level_counts().iter().filter(|&&c| c > 0).count();
            if observed < 2 {
                return Err(Error::invalid(format!(
                    "subgroup variable `{}` has fewer than 2 observed levels",
                    var.name
                )));
            }
        }
        for cov in &covariates {
            if cov.len() != n {
                return Err(Error::Dimension {
                    context: "covariate length",
                    expected: n,
                    got: cov.len(),
                });
            }
            if let Covariate::Numeric { name, values } = cov {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!(
                        "covariate `{name}` has non-finite values"
                    )));
                }
            }
        }
        let mut names: Vec<&str> = subgroup_vars.iter().map(|v| v.name.as_str()).collect();
        names.extend(covariates.iter().map(|c| c.name()));
        let mut sorted = names.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate column names"));
        }
        match &endpoint {
            Endpoint::Continuous(y) => {
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("continuous outcome has non-finite values"));
                }
            }
            Endpoint::Binary(_) => {}
            Endpoint::Count { exposure, .. } => {
                if let Some(e) = exposure {
                    if e.len() != n {
                        return Err(Error::Dimension {
                            context: "exposure length",
                            expected: n,
                            got: e.len(),
                        });
                    }
                    if e.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                        return Err(Error::invalid("exposures must be positive and finite"));
                    }
                }
            }
            Endpoint::TimeToEvent { time, event } => {
                if event.len() != n {
                    return Err(Error::Dimension {
                        context: "event indicator length",
                        expected: n,
                        got: event.len(),
                    });
                }
                if time.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                    return Err(Error::invalid("event times must be strictly positive"));
                }
            }
        }
        Ok(Self {
            treatment,
            subgroup_vars,
            covariates,
            endpoint,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.treatment.len()
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn subgroup_vars(&self) -> &[CategoricalVar] {
        &self.subgroup_vars
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Total number of single-variable subgroups, K = sum of level counts.
    pub fn n_subgroups(&self) -> usize {
        self.subgroup_vars.iter().map(|v| v.n_levels()).sum()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.subgroup_vars.iter().position(|v| v.name == name)
    }

    /// All K subgroups in variable/level order.
    pub fn subgroups(&self) -> Vec<SubgroupId> {
        self.subgroup_vars
            .iter()
            .enumerate()
            .flat_map(|(j, v)| {
                (0..v.n_levels()).map(move |l| SubgroupId::Level {
                    variable: j,
                    level: l,
                })
            })
            .collect()
    }

    pub fn subgroups_of(&self, variable: usize) -> Vec<SubgroupId> {
        (0..self.subgroup_vars[variable].n_levels())
            .map(|level| SubgroupId::Level { variable, level })
            .collect()
    }

    pub fn members(&self, id: SubgroupId) -> Result<Vec<usize>> {
        match id {
            SubgroupId::Population => Ok((0..self.n_subjects()).collect()),
            SubgroupId::Level { variable, level } => {
                let var = self.subgroup_vars.get(variable).ok_or_else(|| {
                    Error::config(format!("unknown subgroup variable index {variable}"))
                })?;
                if level >= var.n_levels() {
                    return Err(Error::config(format!(
                        "unknown level index {level} for variable `{}`",
                        var.name
                    )));
                }
                Ok(var
                    .codes
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c == level)
                    .map(|(i, _)| i)
                    .collect())
            }
        }
    }

    pub fn subgroup_label(&self, id: SubgroupId) -> String {
        match id {
            SubgroupId::Population => "population".to_string(),
            SubgroupId::Level { variable, level } => {
                let var = &self.subgroup_vars[variable];
                format!("{}={}", var.name, var.levels[level])
            }
        }
    }

    /// Reads a dataset from a CSV file with a header row.
    pub fn from_csv(path: impl AsRef<Path>, roles: &ColumnRoles) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(file, roles)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R, roles: &ColumnRoles) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::config(format!("column `{name}` not found in CSV header")))
        };
        let mut records: Vec<csv::StringRecord> = Vec::new();
        for rec in rdr.records() {
            records.push(rec?);
        }
        let text =
            |idx: usize| -> Vec<String> { records.iter().map(|r| r[idx].to_string()).collect() };
        let numeric = |name: &str| -> Result<Vec<f64>> {
            let idx = col(name)?;
            records
                .iter()
                .enumerate()
                .map(|(row, r)| {
                    r[idx].parse::<f64>().map_err(|_| {
                        Error::invalid(format!(
                            "column `{name}` row {}: `{}` is not numeric",
                            row + 1,
                            &r[idx]
                        ))
                    })
                })
                .collect()
        };
        let flag = |name: &str| -> Result<Vec<bool>> {
            numeric(name)?
                .into_iter()
                .map(|v| match v {
                    0.0 => Ok(false),
                    1.0 => Ok(true),
                    _ => Err(Error::invalid(format!("column `{name}` must be coded 0/1"))),
                })
                .collect()
        };

        let treatment = flag(&roles.treatment)?;
        let subgroup_vars = roles
            .subgroups
            .iter()
            .map(|name| Ok(CategoricalVar::from_values(name.clone(), &text(col(name)?))))
            .collect::<Result<Vec<_>>>()?;
        let covariates = roles
            .covariates
            .iter()
            .map(|name| {
                let idx = col(name)?;
                match numeric(name) {
                    Ok(values) => Ok(Covariate::Numeric {
                        name: name.clone(),
                        values,
                    }),
                    Err(_) => Ok(Covariate::Categorical(CategoricalVar::from_values(
                        name.clone(),
                        &text(idx),
                    ))),
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let endpoint = match roles.endpoint {
            EndpointRole::Continuous => {
                Endpoint::Continuous(numeric(required(&roles.outcome, "outcome")?)?)
            }
            EndpointRole::Binary => Endpoint::Binary(flag(required(&roles.outcome, "outcome")?)?),
            EndpointRole::Count => {
                let raw = numeric(required(&roles.outcome, "outcome")?)?;
                let counts = raw
                    .into_iter()
                    .map(|v| {
                        if v >= 0.0 && v.fract() == 0.0 {
                            Ok(v as u64)
                        } else {
                            Err(Error::invalid("counts must be non-negative integers"))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let exposure = roles.exposure.as_deref().map(numeric).transpose()?;
                Endpoint::Count { counts, exposure }
            }
            EndpointRole::TimeToEvent => Endpoint::TimeToEvent {
                time: numeric(required(&roles.time, "time")?)?,
                event: flag(required(&roles.event, "event")?)?,
            },
        };
        TrialDataset::new(treatment, subgroup_vars, covariates, endpoint)
    }
}

fn required<'a>(field: &'a Option<String>, role: &str) -> Result<&'a str> {
    field.as_deref().ok_or_else(|| {
        Error::config(format!(
            "column role `{role}` is required for this endpoint"
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointRole {
    Continuous,
    Binary,
    Count,
    TimeToEvent,
}

/// Declared roles of CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub treatment: String,
    pub subgroups: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    pub endpoint: EndpointRole,
    #[serde(default)]
    pub outcome: Option<String>,
    #[serde(default)]
    pub time: Option<String>,
    #[serde(default)]
    pub event: Option<String>,
    #[serde(default)]
    pub exposure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    BernoulliLogit,
    NegativeBinomial,
    CoxMspline,
}

impl Family {
    pub fn has_intercept(self) -> bool {
        self != Family::CoxMspline
    }

    fn matches(self, endpoint: &Endpoint) -> bool {
        matches!(
            (self, endpoint),
            (Family::Gaussian, Endpoint::Continuous(_))
                | (Family::BernoulliLogit, Endpoint::Binary(_))
                | (Family::NegativeBinomial, Endpoint::Count { .. })
                | (Family::CoxMspline, Endpoint::TimeToEvent { .. })
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OneWay { variable: String },
    Global,
}

/// Protocol assumptions used to anchor hyperprior scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialAssumptions {
    /// Planned effect magnitude on the modeling scale (log scale for ratio measures).
    pub delta_plan: f64,
    /// Planned outcome standard deviation (continuous endpoints only).
    pub sigma_plan: Option<f64>,
}

impl TrialAssumptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_plan > 0.0 && self.delta_plan.is_finite()) {
            return Err(Error::config("delta_plan must be positive"));
        }
        if let Some(s) = self.sigma_plan {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("sigma_plan must be positive"));
            }
        }
        Ok(())
    }
}

/// Full description of an outcome model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub mode: Mode,
    pub prior: PriorConfig,
    pub assumptions: TrialAssumptions,
    /// Additional unshrunken prognostic covariates (covariate or subgroup variable names).
    pub adjust_for: Vec<String>,
    /// Subgroups (`variable`, `level`) whose treatment interaction is left unshrunken (global mode).
    pub unshrunken_predictive: Vec<(String, String)>,
}

impl ModelSpec {
    pub fn one_way(
        family: Family,
        variable: impl Into<String>,
        prior: PriorConfig,
        assumptions: TrialAssumptions,
    ) -> Self {
        Self {
            family,
            mode: Mode::OneWay {
                variable: variable.into(),
            },
            prior,
            assumptions,
            adjust_for: Vec::new(),
            unshrunken_predictive: Vec::new(),
        }
    }

    pub fn global(family: Family, prior: PriorConfig, assumptions: TrialAssumptions) -> Self {
        Self {
            family,
            mode: Mode::Global,
            prior,
            assumptions,
            adjust_for: Vec::new(),
            unshrunken_predictive: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Unshrunken,
    ShrunkenPrognostic,
    ShrunkenPredictive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Intercept,
    Treatment,
    Term(TermKind),
}

/// Descriptor of one design-matrix column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnInfo {
    pub label: String,
    pub role: ColumnRole,
    pub source: Option<String>,
    pub level: Option<String>,
    /// Subgroup this column indicates, for categorical subgroup columns.
    pub subgroup: Option<SubgroupId>,
    pub interacts_with_treatment: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermGroup {
    pub kind: TermKind,
    pub columns: Vec<usize>,
}

/// Design matrices in compressed sparse row form.
///
/// Stored entries exclude the treatment factor; columns flagged
/// `interacts_with_treatment` are multiplied by z (or an override) on use.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    columns: Vec<ColumnInfo>,
    row_start: Vec<usize>,
    entry_col: Vec<usize>,
    entry_val: Vec<f64>,
    treatment: Vec<f64>,
    offset: Vec<f64>,
    unshrunken: Range<usize>,
    shrunken_prognostic: Range<usize>,
    shrunken_predictive: Range<usize>,
    model_variables: Vec<usize>,
}

impl DesignMatrices {
    pub fn n_rows(&self) -> usize {
        self.treatment.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[ColumnInfo] {
        &self.columns
    }

    pub fn has_intercept(&self) -> bool {
        self.columns
            .first()
            .map(|c| c.role == ColumnRole::Intercept)
            .unwrap_or(false)
    }

    pub fn treatment_column(&self) -> usize {
        usize::from(self.has_intercept())
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Column range holding unshrunken terms (prognostic dummies, covariates, promoted interactions).
    pub fn unshrunken_block(&self) -> Range<usize> {
        self.unshrunken.clone()
    }

    pub fn shrunken_prognostic_block(&self) -> Range<usize> {
        self.shrunken_prognostic.clone()
    }

    pub fn shrunken_predictive_block(&self) -> Range<usize> {
        self.shrunken_predictive.clone()
    }

    /// Indices of the subgroup variables entering the model.
    pub fn model_variables(&self) -> &[usize] {
        &self.model_variables
    }

    /// Columns grouped by term kind; intercept and treatment are not part of any group.
    pub fn term_groups(&self) -> Vec<TermGroup> {
        [
            (TermKind::Unshrunken, self.unshrunken.clone()),
            (
                TermKind::ShrunkenPrognostic,
                self.shrunken_prognostic.clone(),
            ),
            (
                TermKind::ShrunkenPredictive,
                self.shrunken_predictive.clone(),
            ),
        ]
        .into_iter()
        .map(|(kind, r)| TermGroup {
            kind,
            columns: r.collect(),
        })
        .collect()
    }

    /// Nonzero `(column, value)` entries of row `i`, before the treatment factor.
    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_start[i]..self.row_start[i + 1];
        self.entry_col[r.clone()]
            .iter()
            .copied()
            .zip(self.entry_val[r].iter().copied())
    }

    /// Row `i` as a dense vector, with treatment set to `z`.
    pub fn dense_row(&self, i: usize, z: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.n_columns()];
        for (c, v) in self.row_entries(i) {
            row[c] = if self.columns[c].interacts_with_treatment {
                v * z
            } else {
                v
            };
        }
        row
    }

    /// Linear predictor for every subject, optionally forcing the treatment assignment.
    pub fn linear_predictor(
        &self,
        coefficients: &[f64],
        treatment_override: Option<bool>,
    ) -> Result<Vec<f64>> {
        if coefficients.len() != self.n_columns() {
            return Err(Error::Dimension {
                context: "linear predictor coefficients",
                expected: self.n_columns(),
                got: coefficients.len(),
            });
        }
        let z_override = treatment_override.map(|t| if t { 1.0 } else { 0.0 });
        Ok((0..self.n_rows())
            .map(|i| self.row_lp(i, coefficients, z_override.unwrap_or(self.treatment[i])))
            .collect())
    }

    pub(crate) fn row_lp(&self, i: usize, coefficients: &[f64], z: f64) -> f64 {
        let mut prog = self.offset[i];
        let mut pred = 0.0;
        for (c, v) in self.row_entries(i) {
            if self.columns[c].interacts_with_treatment {
                pred += coefficients[c] * v;
            } else {
                prog += coefficients[c] * v;
            }
        }
        prog + z * pred
    }
}

struct ColumnBuilder {
    info: ColumnInfo,
    values: Vec<f64>,
}

/// Builds design matrices for `spec` on `dataset`.
pub fn build_design(dataset: &TrialDataset, spec: &ModelSpec) -> Result<DesignMatrices> {
    if !spec.family.matches(dataset.endpoint()) {
        return Err(Error::config(format!(
            "family {:?} does not match the dataset's {} endpoint",
            spec.family,
            dataset.endpoint().kind()
        )));
    }
    spec.assumptions.validate()?;
    spec.prior.validate()?;
    let n = dataset.n_subjects();
    let vars = dataset.subgroup_vars();
    let lookup_var = |name: &str| -> Result<usize> {
        dataset
            .variable_index(name)
            .ok_or_else(|| Error::config(format!("unknown subgroup variable `{name}`")))
    };

    let model_variables: Vec<usize> = match &spec.mode {
        Mode::OneWay { variable } => {
            if !spec.unshrunken_predictive.is_empty() {
                return Err(Error::config(
                    "unshrunken predictive terms are only available in global models",
                ));
            }
            vec![lookup_var(variable)?]
        }
        Mode::Global => (0..vars.len()).collect(),
    };

    let mut promoted: Vec<(usize, usize)> = Vec::new();
    for (vname, lname) in &spec.unshrunken_predictive {
        let j = lookup_var(vname)?;
        let l = vars[j].level_index(lname).ok_or_else(|| {
            Error::config(format!("unknown level `{lname}` of variable `{vname}`"))
        })?;
        promoted.push((j, l));
    }

    for &j in &model_variables {
        check_levels(&vars[j])?;
    }

    let z: Vec<f64> = dataset
        .treatment()
        .iter()
        .map(|&t| if t { 1.0 } else { 0.0 })
        .collect();
    let mut cols: Vec<ColumnBuilder> = Vec::new();
    if spec.family.has_intercept() {
        cols.push(ColumnBuilder {
            info: ColumnInfo {
                label: "intercept".into(),
                role: ColumnRole::Intercept,
                source: None,
                level: None,
                subgroup: None,
                interacts_with_treatment: false,
            },
            values: vec![1.0; n],
        });
    }
    cols.push(ColumnBuilder {
        info: ColumnInfo {
            label: "treatment".into(),
            role: ColumnRole::Treatment,
            source: None,
            level: None,
            subgroup: None,
            interacts_with_treatment: true,
        },
        values: vec![1.0; n],
    });

    let unshrunken_start = cols.len();
    let shrink_prognostic = matches!(spec.prior.prognostic, PrognosticPrior::NormalHn { .. });
    let indicator = |var: &CategoricalVar, level: usize| -> Vec<f64> {
        var.codes
            .iter()
            .map(|&c| if c == level { 1.0 } else { 0.0 })
            .collect()
    };
    let term = |kind: TermKind| ColumnRole::Term(kind);

    if !shrink_prognostic {
        for &j in &model_variables {
            let var = &vars[j];
            for level in 1..var.n_levels() {
                cols.push(ColumnBuilder {
                    info: ColumnInfo {
                        label: format!("prog[{}={}]", var.name, var.levels[level]),
                        role: term(TermKind::Unshrunken),
                        source: Some(var.name.clone()),
                        level: Some(var.levels[level].clone()),
                        subgroup: Some(SubgroupId::Level { variable: j, level }),
                        interacts_with_treatment: false,
                    },
                    values: indicator(var, level),
                });
            }
        }
    }

    for name in &spec.adjust_for {
        if let Some(j) = dataset.variable_index(name) {
            if model_variables.contains(&j) {
                continue;
            }
            let var = &vars[j];
            check_levels(var)?;
            for level in 1..var.n_levels() {
                cols.push(ColumnBuilder {
                    info: ColumnInfo {
                        label: format!("adj[{}={}]", var.name, var.levels[level]),
                        role: term(TermKind::Unshrunken),
                        source: Some(var.name.clone()),
                        level: Some(var.levels[level].clone()),
                        subgroup: Some(SubgroupId::Level { variable: j, level }),
                        interacts_with_treatment: false,
                    },
                    values: indicator(var, level),
                });
            }
            continue;
        }
        let cov = dataset
            .covariates()
            .iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::config(format!("unknown adjustment covariate `{name}`")))?;
        match cov {
            Covariate::Numeric { name, values } => cols.push(ColumnBuilder {
                info: ColumnInfo {
                    label: format!("adj[{name}]"),
                    role: term(TermKind::Unshrunken),
                    source: Some(name.clone()),
                    level: None,
                    subgroup: None,
                    interacts_with_treatment: false,
                },
                values: values.clone(),
            }),
            Covariate::Categorical(var) => {
                check_levels(var)?;
                for level in 1..var.n_levels() {
                    cols.push(ColumnBuilder {
                        info: ColumnInfo {
                            label: format!("adj[{}={}]", var.name, var.levels[level]),
                            role: term(TermKind::Unshrunken),
                            source: Some(var.name.clone()),
                            level: Some(var.levels[level].clone()),
                            subgroup: None,
                            interacts_with_treatment: false,
                        },
                        values: indicator(var, level),
                    });
                }
            }
        }
    }

    for &(j, level) in &promoted {
        let var = &vars[j];
        cols.push(ColumnBuilder {
            info: ColumnInfo {
                label: format!("pred[{}={}]", var.name, var.levels[level]),
                role: term(TermKind::Unshrunken),
                source: Some(var.name.clone()),
                level: Some(var.levels[level].clone()),
                subgroup: Some(SubgroupId::Level { variable: j, level }),
                interacts_with_treatment: true,
            },
            values: indicator(var, level),
        });
    }
    let unshrunken = unshrunken_start..cols.len();

    let prog_start = cols.len();
    if shrink_prognostic {
        for &j in &model_variables {
            let var = &vars[j];
            for level in 0..var.n_levels() {
                cols.push(ColumnBuilder {
                    info: ColumnInfo {
                        label: format!("prog[{}={}]", var.name, var.levels[level]),
                        role: term(TermKind::ShrunkenPrognostic),
                        source: Some(var.name.clone()),
                        level: Some(var.levels[level].clone()),
                        subgroup: Some(SubgroupId::Level { variable: j, level }),
                        interacts_with_treatment: false,
                    },
                    values: indicator(var, level),
                });
            }
        }
    }
    let shrunken_prognostic = prog_start..cols.len();

    let pred_start = cols.len();
    for &j in &model_variables {
        let var = &vars[j];
        for level in 0..var.n_levels() {
            if promoted.contains(&(j, level)) {
                continue;
            }
            cols.push(ColumnBuilder {
                info: ColumnInfo {
                    label: format!("pred[{}={}]", var.name, var.levels[level]),
                    role: term(TermKind::ShrunkenPredictive),
                    source: Some(var.name.clone()),
                    level: Some(var.levels[level].clone()),
                    subgroup: Some(SubgroupId::Level { variable: j, level }),
                    interacts_with_treatment: true,
                },
                values: indicator(var, level),
            });
        }
    }
    let shrunken_predictive = pred_start..cols.len();

    let offset = match (spec.family, dataset.endpoint()) {
        (
            Family::NegativeBinomial,
            Endpoint::Count {
                exposure: Some(e), ..
            },
        ) => e.iter().map(|v| v.ln()).collect(),
        _ => vec![0.0; n],
    };

    let mut row_start = Vec::with_capacity(n + 1);
    let mut entry_col = Vec::new();
    let mut entry_val = Vec::new();
    row_start.push(0);
    for i in 0..n {
        for (c, col) in cols.iter().enumerate() {
            let v = col.values[i];
            if v != 0.0 {
                entry_col.push(c);
                entry_val.push(v);
            }
        }
        row_start.push(entry_col.len());
    }

    Ok(DesignMatrices {
        columns: cols.into_iter().map(|c| c.info).collect(),
        row_start,
        entry_col,
        entry_val,
        treatment: z,
        offset,
        unshrunken,
        shrunken_prognostic,
        shrunken_predictive,
        model_variables,
    })
}

fn check_levels(var: &CategoricalVar) -> Result<()> {
    for (level, count) in var.level_counts().into_iter().enumerate() {
        if count == 0 {
            return Err(Error::DegenerateDesign {
                variable: var.name.clone(),
                level: var.levels[level].clone(),
            });
        }
    }
    Ok(())
}
