//! Replicate loop: generate a trial, run every estimator, keep per-subgroup
//! estimates and intervals on the modeling scale.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generators::{generate_trial, ContinuousPopulation};
use super::metrics::{aggregate, MetricsReport};
use super::truth::{compute_true_effects, continuous_truth, TrueEffects};
use super::{GeneratorParams, SimScenario};
use crate::baselines::{fit_frequentist, FrequentistEstimate, FrequentistOptions};
use crate::design::{ModelSpec, SubgroupId, TrialDataset};
use crate::engine::{fit_shrinkage, SamplerConfig};
use crate::error::{Error, Result};
use crate::priors::{PredictivePrior, PriorConfig};
use crate::standardize::{standardized_effects, StandardizeOptions, SubgroupEffect, TimeGrid};

/// An estimator compared in a simulation campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    /// Unadjusted fit within each subgroup.
    Standard,
    /// Unadjusted (or subgroup-variable adjusted) fit on the whole trial, reported for every subgroup.
    Population {
        #[serde(default)]
        adjusted: bool,
    },
    /// One model per subgrouping variable.
    OneWay {
        #[serde(flatten)]
        prior: PredictivePrior,
        /// Also adjust for every other subgrouping variable (unshrunken).
        #[serde(default)]
        adjust_all: bool,
    },
    /// One model with all subgrouping variables.
    Global {
        #[serde(flatten)]
        prior: PredictivePrior,
    },
}

fn prior_label(p: &PredictivePrior) -> String {
    match p {
        PredictivePrior::NormalHn { phi } => format!("normal_hn phi={phi:.4}"),
        PredictivePrior::RegularizedHorseshoe { tau0, .. } => format!("rhs tau0={tau0:.4}"),
    }
}

impl EstimatorSpec {
    pub fn label(&self) -> String {
        match self {
            EstimatorSpec::Standard => "standard".into(),
            EstimatorSpec::Population { adjusted: false } => "population".into(),
            EstimatorSpec::Population { adjusted: true } => "population adjusted".into(),
            EstimatorSpec::OneWay { prior, adjust_all } => {
                format!(
                    "one-way {}{}",
                    prior_label(prior),
                    if *adjust_all { " adjusted" } else { "" }
                )
            }
            EstimatorSpec::Global { prior } => format!("global {}", prior_label(prior)),
        }
    }

    pub fn is_bayesian(&self) -> bool {
        matches!(
            self,
            EstimatorSpec::OneWay { .. } | EstimatorSpec::Global { .. }
        )
    }
}

fn shrinkage_roster(phis: [f64; 3], tau0s: [f64; 3], slab_scale: f64) -> Vec<EstimatorSpec> {
    let mut v = vec![
        EstimatorSpec::Standard,
        EstimatorSpec::Population { adjusted: false },
    ];
    v.extend(phis.iter().map(|&phi| EstimatorSpec::OneWay {
        prior: PredictivePrior::NormalHn { phi },
        adjust_all: false,
    }));
    v.extend(tau0s.iter().map(|&tau0| EstimatorSpec::Global {
        prior: PredictivePrior::RegularizedHorseshoe {
            tau0,
            slab_scale,
            slab_df: 4.0,
        },
    }));
    v
}

/// Estimators of the time-to-event study.
pub fn tte_roster(delta_plan: f64) -> Vec<EstimatorSpec> {
    let d = delta_plan.abs();
    shrinkage_roster([1.0, d, d / 2.0], [1.0, d, d / 10.0], 2.0)
}

/// Estimators of the continuous-outcome study.
pub fn continuous_roster(delta_plan: f64, sigma_plan: f64) -> Vec<EstimatorSpec> {
    let d = delta_plan.abs();
    shrinkage_roster(
        [sigma_plan, d, d / 2.0],
        [sigma_plan, d, d / 10.0],
        2.0 * sigma_plan,
    )
}

/// Campaign settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub n_sim: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub standardize: StandardizeOptions,
    /// Empty means the scenario's default roster.
    pub estimators: Vec<EstimatorSpec>,
    /// Synthetic subjects for time-to-event truth.
    pub truth_n_large: usize,
    pub truth_seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            n_sim: 100,
            seed: 1,
            sampler: SamplerConfig {
                n_chains: 2,
                n_warmup: 500,
                n_draws: 500,
                ..SamplerConfig::default()
            },
            standardize: StandardizeOptions {
                grid: TimeGrid::Uniform(128),
                max_draws: Some(250),
                ..StandardizeOptions::default()
            },
            estimators: Vec::new(),
            truth_n_large: 200_000,
            truth_seed: 7,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sim == 0 {
            return Err(Error::config("n_sim must be at least 1"));
        }
        self.sampler.validate()
    }

    pub fn roster(&self, scenario: &SimScenario) -> Vec<EstimatorSpec> {
        if !self.estimators.is_empty() {
            return self.estimators.clone();
        }
        match scenario.sigma_plan {
            Some(s) if matches!(scenario.params, GeneratorParams::Continuous(_)) => {
                continuous_roster(scenario.delta_plan, s)
            }
            _ => tte_roster(scenario.delta_plan),
        }
    }
}

/// Per-subgroup estimates of one estimator in one replicate (modeling scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimates {
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// False when any underlying sampler run raised convergence warnings.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    /// One entry per estimator; `Err` holds the failure message.
    pub results: Vec<std::result::Result<ReplicateEstimates, String>>,
}

/// Seed of replicate `rep`'s trial; depends only on (master seed, replicate).
fn replicate_seed(master: u64, rep: usize, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(2 * rep as u64 + purpose);
    rng.next_u64()
}

fn to_model_scale(v: f64, ratio: bool) -> f64 {
    if ratio {
        v.ln()
    } else {
        v
    }
}

fn frequentist_row(e: &FrequentistEstimate) -> std::result::Result<(f64, f64, f64), String> {
    if !e.converged {
        return Err(format!(
            "{} fit in `{}` did not converge: {}",
            e.estimator_label,
            e.subgroup,
            e.note.as_deref().unwrap_or("unknown reason")
        ));
    }
    let r = e.scale.is_ratio();
    Ok((
        e.estimate,
        to_model_scale(e.lower, r),
        to_model_scale(e.upper, r),
    ))
}

fn bayes_rows(effects: &[SubgroupEffect]) -> Vec<(f64, f64, f64)> {
    effects
        .iter()
        .map(|e| {
            let r = e.scale.is_ratio();
            (
                to_model_scale(e.point, r),
                to_model_scale(e.lower, r),
                to_model_scale(e.upper, r),
            )
        })
        .collect()
}

fn run_estimator(
    spec: &EstimatorSpec,
    scenario: &SimScenario,
    data: &TrialDataset,
    config: &CampaignConfig,
    sampler_seed: u64,
) -> std::result::Result<ReplicateEstimates, String> {
    let family = scenario.family();
    let ids = data.subgroups();
    let all_vars: Vec<String> = data
        .subgroup_vars()
        .iter()
        .map(|v| v.name.clone())
        .collect();
    let mut rows: Vec<(f64, f64, f64)> = Vec::with_capacity(ids.len());
    let mut converged = true;
    let err = |e: Error| e.to_string();
    match spec {
        EstimatorSpec::Standard => {
            for &id in &ids {
                let members = data.members(id).map_err(err)?;
                let est =
                    fit_frequentist(data, &members, family, id, &FrequentistOptions::default())
                        .map_err(err)?;
                rows.push(frequentist_row(&est)?);
            }
        }
        EstimatorSpec::Population { adjusted } => {
            let opts = FrequentistOptions {
                adjust_for: if *adjusted { all_vars } else { Vec::new() },
                estimator_label: spec.label(),
                ..Default::default()
            };
            let members: Vec<usize> = (0..data.n_subjects()).collect();
            let est = fit_frequentist(data, &members, family, SubgroupId::Population, &opts)
                .map_err(err)?;
            let row = frequentist_row(&est)?;
            rows = vec![row; ids.len()];
        }
        EstimatorSpec::OneWay { prior, adjust_all } => {
            for (j, var) in all_vars.iter().enumerate() {
                let mut model = ModelSpec::one_way(
                    family,
                    var.clone(),
                    PriorConfig::with_predictive(*prior),
                    scenario.assumptions(),
                );
                if *adjust_all {
                    model.adjust_for = all_vars.iter().filter(|v| *v != var).cloned().collect();
                }
                let sampler = SamplerConfig {
                    seed: sampler_seed.wrapping_add(j as u64),
                    ..config.sampler
                };
                let fit = fit_shrinkage(data, &model, &sampler).map_err(err)?;
                converged &= fit.converged();
                let eff = standardized_effects(
                    &fit,
                    &data.subgroups_of(j),
                    &spec.label(),
                    &config.standardize,
                )
                .map_err(err)?;
                rows.extend(bayes_rows(&eff));
            }
        }
        EstimatorSpec::Global { prior } => {
            let model = ModelSpec::global(
                family,
                PriorConfig::with_predictive(*prior),
                scenario.assumptions(),
            );
            let sampler = SamplerConfig {
                seed: sampler_seed,
                ..config.sampler
            };
            let fit = fit_shrinkage(data, &model, &sampler).map_err(err)?;
            converged &= fit.converged();
            let eff = standardized_effects(&fit, &ids, &spec.label(), &config.standardize)
                .map_err(err)?;
            rows = bayes_rows(&eff);
        }
    }
    if let Some(bad) = rows
        .iter()
        .position(|r| !(r.0.is_finite() && r.1.is_finite() && r.2.is_finite()))
    {
        return Err(format!(
            "non-finite estimate in subgroup {}",
            data.subgroup_label(ids[bad])
        ));
    }
    Ok(ReplicateEstimates {
        estimate: rows.iter().map(|r| r.0).collect(),
        lower: rows.iter().map(|r| r.1).collect(),
        upper: rows.iter().map(|r| r.2).collect(),
        converged,
    })
}

/// Generates replicate `rep` and runs every estimator on it.
pub fn run_replicate(
    scenario: &SimScenario,
    estimators: &[EstimatorSpec],
    config: &CampaignConfig,
    rep: usize,
) -> Result<ReplicateOutcome> {
    let data = generate_trial(scenario, replicate_seed(config.seed, rep, 0))?;
    let base = replicate_seed(config.seed, rep, 1);
    let results = estimators
        .iter()
        .enumerate()
        .map(|(e, spec)| {
            let r = run_estimator(
                spec,
                scenario,
                &data,
                config,
                base.wrapping_add(1000 * e as u64),
            );
            if let Err(msg) = &r {
                log::warn!(
                    "replicate {rep}, estimator `{}` failed: {msg}",
                    spec.label()
                );
            }
            r
        })
        .collect();
    Ok(ReplicateOutcome {
        replicate: rep,
        results,
    })
}

/// Truth used by campaigns: the canonical population for continuous
/// scenarios, a large synthetic cohort for time-to-event scenarios.
pub(crate) fn campaign_truth(
    scenario: &SimScenario,
    config: &CampaignConfig,
) -> Result<TrueEffects> {
    match &scenario.params {
        GeneratorParams::Continuous(p) => {
            Ok(continuous_truth(ContinuousPopulation::canonical(), p))
        }
        GeneratorParams::Tte(_) => {
            compute_true_effects(scenario, config.truth_n_large, config.truth_seed)
        }
    }
}

/// Runs `config.n_sim` replicates (in parallel) and aggregates the metrics.
pub fn run_campaign(scenario: &SimScenario, config: &CampaignConfig) -> Result<MetricsReport> {
    config.validate()?;
    scenario.validate()?;
    let estimators = config.roster(scenario);
    let truth = campaign_truth(scenario, config)?;
    let outcomes: Vec<ReplicateOutcome> = (0..config.n_sim)
        .into_par_iter()
        .map(|rep| run_replicate(scenario, &estimators, config, rep))
        .collect::<Result<_>>()?;
    let labels: Vec<String> = estimators.iter().map(|e| e.label()).collect();
    aggregate(scenario, &truth, &labels, &outcomes)
}
