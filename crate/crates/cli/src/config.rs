//! Declarative run configuration (TOML) and command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use subgroup_shrink::design::{ColumnRoles, EndpointRole, Family, TrialAssumptions};
use subgroup_shrink::engine::SamplerConfig;
use subgroup_shrink::priors::PredictivePrior;
use subgroup_shrink::simlab::{CampaignConfig, EndpointKind, EstimatorSpec};
use subgroup_shrink::standardize::{ForestRequest, StandardizeOptions};

use crate::error::{CliError, Result};

/// Name of the effective configuration echoed into every output directory.
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Analyze,
    Simulate,
    PriorCalibrate,
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommandKind::Analyze => "analyze",
            CommandKind::Simulate => "simulate",
            CommandKind::PriorCalibrate => "prior-calibrate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

impl FromStr for OutputFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "svg" => Ok(OutputFormat::Svg),
            other => Err(CliError::config(format!("unknown output format `{other}`"))),
        }
    }
}

/// Parses a comma-separated format list such as `csv,svg`.
pub fn parse_formats(list: &str) -> Result<Vec<OutputFormat>> {
    let mut v = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(OutputFormat::from_str)
        .collect::<Result<Vec<_>>>()?;
    v.sort();
    v.dedup();
    if v.is_empty() {
        return Err(CliError::config("at least one output format is required"));
    }
    Ok(v)
}

/// Input dataset: a CSV path plus column roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub treatment: String,
    pub subgroups: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Inferred from `model.family` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Inferred from `data.endpoint` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_plan: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_plan: Option<f64>,
    /// Subgroup rows as `variable=level`; empty means every level.
    pub forest: Vec<String>,
    /// Extra prognostic covariates in every model.
    pub adjust_for: Vec<String>,
    pub level: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: None,
            delta_plan: None,
            sigma_plan: None,
            forest: Vec::new(),
            adjust_for: Vec::new(),
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub endpoint: EndpointKind,
    /// Scenario ids; empty means all scenarios of the endpoint.
    pub scenarios: Vec<u8>,
    pub n_sim: usize,
    pub truth_n_large: usize,
    pub truth_seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            endpoint: EndpointKind::Continuous,
            scenarios: Vec::new(),
            n_sim: 100,
            truth_n_large: 200_000,
            truth_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorCalibrateConfig {
    pub priors: Vec<PredictivePrior>,
    pub probs: Vec<f64>,
    pub n_draws: usize,
}

impl Default for PriorCalibrateConfig {
    fn default() -> Self {
        let rhs = |tau0| PredictivePrior::RegularizedHorseshoe {
            tau0,
            slab_scale: 2.0,
            slab_df: 4.0,
        };
        Self {
            priors: vec![
                PredictivePrior::NormalHn { phi: 1.0 },
                rhs(1.0),
                rhs(0.3),
                rhs(0.03),
            ],
            probs: vec![0.05, 0.5, 0.95],
            n_draws: 1_000_000,
        }
    }
}

/// Everything a run needs. Plain values come before tables so the struct
/// serializes back to valid TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandKind>,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub formats: Vec<OutputFormat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    pub model: ModelConfig,
    pub estimators: Vec<EstimatorSpec>,
    /// Filled with command-specific defaults by [`RunConfig::load`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardize: Option<StandardizeOptions>,
    pub simulate: SimulateConfig,
    pub prior_calibrate: PriorCalibrateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            seed: 1,
            out: PathBuf::from("subshrink-out"),
            threads: None,
            formats: vec![OutputFormat::Csv, OutputFormat::Json, OutputFormat::Svg],
            data: None,
            model: ModelConfig::default(),
            estimators: Vec::new(),
            sampler: None,
            standardize: None,
            simulate: SimulateConfig::default(),
            prior_calibrate: PriorCalibrateConfig::default(),
        }
    }
}

/// Values given on the command line; they win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub formats: Option<Vec<OutputFormat>>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::ParseConfig {
            path: path.to_path_buf(),
            source: Box::new(e),
        })
    }

    /// Loads `path` (or defaults), applies overrides and checks the command.
    pub fn load(path: Option<&Path>, command: CommandKind, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| CliError::ReadConfig {
                    path: p.to_path_buf(),
                    source,
                })?;
                let mut cfg = Self::from_toml_str(&text, p)?;
                // Relative data paths are resolved against the config file.
                if let (Some(data), Some(dir)) = (cfg.data.as_mut(), p.parent()) {
                    if data.path.is_relative() && !dir.as_os_str().is_empty() {
                        data.path = dir.join(&data.path);
                    }
                    // Absolute, so the echoed config works from any directory.
                    if let Ok(abs) = std::fs::canonicalize(&data.path) {
                        data.path = abs;
                    }
                }
                cfg
            }
            None => Self::default(),
        };
        match cfg.command {
            Some(c) if c != command => {
                return Err(CliError::config(format!(
                    "config is for `{c}` but `{command}` was requested"
                )))
            }
            _ => cfg.command = Some(command),
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = &overrides.out {
            cfg.out = o.clone();
        }
        if overrides.threads.is_some() {
            cfg.threads = overrides.threads;
        }
        if let Some(f) = &overrides.formats {
            cfg.formats = f.clone();
        }
        let campaign = CampaignConfig::default();
        let (sampler, standardize) = match command {
            CommandKind::Simulate => (campaign.sampler, campaign.standardize),
            _ => (SamplerConfig::default(), StandardizeOptions::default()),
        };
        cfg.sampler.get_or_insert(sampler).seed = cfg.seed;
        cfg.standardize.get_or_insert(standardize);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sampler(&self) -> SamplerConfig {
        self.sampler.unwrap_or_default()
    }

    pub fn standardize(&self) -> StandardizeOptions {
        self.standardize.clone().unwrap_or_default()
    }

    pub fn wants(&self, format: OutputFormat) -> bool {
        self.formats.contains(&format)
    }

    fn validate(&self) -> Result<()> {
        if self.threads == Some(0) {
            return Err(CliError::config("threads must be at least 1"));
        }
        if self.formats.is_empty() {
            return Err(CliError::config("at least one output format is required"));
        }
        if !(self.model.level > 0.0 && self.model.level < 1.0) {
            return Err(CliError::config("model.level must lie in (0, 1)"));
        }
        self.sampler().validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::config(format!("cannot echo config: {e}")))
    }

    /// Family and column roles after inference and consistency checks.
    pub fn resolved_data(&self) -> Result<(Family, ColumnRoles, &Path)> {
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| CliError::config("analyze needs a [data] table"))?;
        if !data.path.is_file() {
            return Err(CliError::config(format!(
                "dataset `{}` does not exist",
                data.path.display()
            )));
        }
        let family = match (self.model.family, data.endpoint) {
            (Some(f), Some(e)) if endpoint_of(f) != e => {
                return Err(CliError::config(format!(
                    "family `{}` does not fit a `{}` endpoint",
                    family_name(f),
                    endpoint_name(e)
                )))
            }
            (Some(f), _) => f,
            (None, Some(e)) => family_of(e),
            (None, None) => {
                return Err(CliError::config(
                    "set model.family or data.endpoint to choose the outcome model",
                ))
            }
        };
        let endpoint = endpoint_of(family);
        let need = |col: &Option<String>, what: &str| {
            if col.is_none() {
                Err(CliError::config(format!(
                    "family `{}` needs a `{what}` column in [data]",
                    family_name(family)
                )))
            } else {
                Ok(())
            }
        };
        match endpoint {
            EndpointRole::TimeToEvent => {
                need(&data.time, "time")?;
                need(&data.event, "event")?;
            }
            _ => need(&data.outcome, "outcome")?,
        }
        let roles = ColumnRoles {
            treatment: data.treatment.clone(),
            subgroups: data.subgroups.clone(),
            covariates: data.covariates.clone(),
            endpoint,
            outcome: data.outcome.clone(),
            time: data.time.clone(),
            event: data.event.clone(),
            exposure: data.exposure.clone(),
        };
        Ok((family, roles, &data.path))
    }

    /// Planning assumptions; required only by shrinkage estimators.
    pub fn assumptions(&self) -> Result<TrialAssumptions> {
        let delta_plan = self
            .model
            .delta_plan
            .ok_or_else(|| CliError::config("shrinkage estimators need model.delta_plan"))?;
        let a = TrialAssumptions {
            delta_plan,
            sigma_plan: self.model.sigma_plan,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn forest_request(&self) -> Result<ForestRequest> {
        if self.model.forest.is_empty() {
            return Ok(ForestRequest::All);
        }
        self.model
            .forest
            .iter()
            .map(|entry| {
                entry
                    .split_once('=')
                    .map(|(v, l)| (v.trim().to_string(), l.trim().to_string()))
                    .ok_or_else(|| {
                        CliError::config(format!("forest entry `{entry}` is not `variable=level`"))
                    })
            })
            .collect::<Result<Vec<_>>>()
            .map(ForestRequest::Levels)
    }
}

fn endpoint_of(f: Family) -> EndpointRole {
    match f {
        Family::Gaussian => EndpointRole::Continuous,
        Family::BernoulliLogit => EndpointRole::Binary,
        Family::NegativeBinomial => EndpointRole::Count,
        Family::CoxMspline => EndpointRole::TimeToEvent,
    }
}

fn family_of(e: EndpointRole) -> Family {
    match e {
        EndpointRole::Continuous => Family::Gaussian,
        EndpointRole::Binary => Family::BernoulliLogit,
        EndpointRole::Count => Family::NegativeBinomial,
        EndpointRole::TimeToEvent => Family::CoxMspline,
    }
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Gaussian => "gaussian",
        Family::BernoulliLogit => "bernoulli_logit",
        Family::NegativeBinomial => "negative_binomial",
        Family::CoxMspline => "cox_mspline",
    }
}

fn endpoint_name(e: EndpointRole) -> &'static str {
    match e {
        EndpointRole::Continuous => "continuous",
        EndpointRole::Binary => "binary",
        EndpointRole::Count => "count",
        EndpointRole::TimeToEvent => "time_to_event",
    }
}
