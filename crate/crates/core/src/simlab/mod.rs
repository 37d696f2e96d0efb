//! Simulation studies: scenario definitions, data generators, true subgroup
//! effects, and the replicate/metrics engine used to compare estimators.

mod campaign;
mod generators;
mod metrics;
mod truth;

pub use campaign::{
    continuous_roster, run_campaign, run_replicate, tte_roster, CampaignConfig, EstimatorSpec,
    ReplicateEstimates, ReplicateOutcome,
};
pub use generators::{
    continuous_variable_names, generate_continuous_trial, generate_trial, generate_tte_trial,
    ContinuousPopulation,
};
pub use metrics::{
    aggregate, write_summary_table, EstimatorMetrics, MetricsReport, NullSubgroupMetrics,
    RangeSummary, SubgroupMetrics, WorstSubgroupMetrics,
};
pub use truth::{compute_true_effects, TrueEffects};

use serde::{Deserialize, Serialize};

use crate::design::{Family, TrialAssumptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Tte,
    Continuous,
}

/// A categorical subgrouping variable of the time-to-event generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub prevalences: Vec<f64>,
}

/// Weibull proportional-hazards generator.
///
/// Coefficient entries are `(variable index, level index, log hazard ratio)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TteParams {
    pub variables: Vec<VariableSpec>,
    pub rho: f64,
    pub weibull_shape: f64,
    /// Baseline cumulative hazard is `baseline_rate * t^shape`.
    pub baseline_rate: f64,
    /// Length of uniform staggered entry (years).
    pub accrual: f64,
    /// Conditional log hazard ratio of treatment in the reference profile.
    pub log_hr: f64,
    pub prognostic: Vec<(usize, usize, f64)>,
    pub interactions: Vec<(usize, usize, f64)>,
    /// Upper end of the time window over which true AHRs are evaluated.
    pub truth_horizon: f64,
}

/// Outcome model `Y = 2.30 (0.5 X1 + X11) + Z (beta0 + beta1 Phi(20 (X11 - 0.5))) + eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousParams {
    pub beta0: f64,
    pub beta1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorParams {
    Tte(TteParams),
    Continuous(ContinuousParams),
}

/// One simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub endpoint: EndpointKind,
    pub id: u8,
    pub n: usize,
    /// Event count at which time-to-event trials are analysed.
    pub n_events: Option<usize>,
    pub delta_plan: f64,
    pub sigma_plan: Option<f64>,
    pub params: GeneratorParams,
}

const TTE_PREVALENCES: [&[f64]; 10] = [
    &[0.5, 0.5],
    &[0.8, 0.2],
    &[0.3, 0.4, 0.3],
    &[0.3, 0.35, 0.35],
    &[0.6, 0.4],
    &[0.15, 0.45, 0.40],
    &[0.7, 0.3],
    &[0.25, 0.5, 0.25],
    &[0.55, 0.45],
    &[0.2, 0.3, 0.5],
];

/// Calibrated treatment coefficients per scenario: (log_hr, interactions).
fn tte_treatment_terms(id: u8) -> (f64, Vec<(usize, usize, f64)>) {
    match id {
        1 => (-0.4248, vec![]),
        2 => (-0.6475, vec![(3, 0, 0.6475)]),
        3 => (
            -0.2861,
            vec![(4, 1, 0.5500), (8, 1, -0.2170), (5, 0, 0.1500)],
        ),
        _ => (
            -0.4600,
            vec![
                (4, 1, 1.1100),
                (8, 1, -0.4500),
                (5, 0, 0.3000),
                (9, 2, -0.2000),
            ],
        ),
    }
}

impl SimScenario {
    /// Time-to-event scenarios 1 (homogeneous) to 4 (strong heterogeneity).
    pub fn tte(id: u8) -> Result<Self> {
        if !(1..=4).contains(&id) {
            return Err(Error::config(format!(
                "time-to-event scenario must be 1-4, got {id}"
            )));
        }
        let (log_hr, interactions) = tte_treatment_terms(id);
        let variables = TTE_PREVALENCES
            .iter()
            .enumerate()
            .map(|(j, p)| VariableSpec {
                name: format!("x{}", j + 1),
                prevalences: p.to_vec(),
            })
            .collect();
        Ok(Self {
            endpoint: EndpointKind::Tte,
            id,
            n: 1000,
            n_events: Some(247),
            delta_plan: 0.7f64.ln().abs(),
            sigma_plan: None,
            params: GeneratorParams::Tte(TteParams {
                variables,
                rho: 0.2,
                weibull_shape: 1.2,
                baseline_rate: 0.06,
                accrual: 2.0,
                log_hr,
                prognostic: vec![(0, 1, 0.5), (2, 1, 0.3), (2, 2, 0.6)],
                interactions,
                truth_horizon: 3.4,
            }),
        })
    }

    /// Continuous-outcome scenarios 1 (homogeneous) to 3 (strong heterogeneity).
    pub fn continuous(id: u8) -> Result<Self> {
        let (beta0, beta1) = match id {
            1 => (0.35, 0.0),
            2 => (0.19, 0.38),
            3 => (0.04, 0.77),
            _ => {
                return Err(Error::config(format!(
                    "continuous scenario must be 1-3, got {id}"
                )))
            }
        };
        Ok(Self {
            endpoint: EndpointKind::Continuous,
            id,
            n: 500,
            n_events: None,
            delta_plan: 0.35,
            sigma_plan: Some(1.20),
            params: GeneratorParams::Continuous(ContinuousParams { beta0, beta1 }),
        })
    }

    pub fn from_kind(endpoint: EndpointKind, id: u8) -> Result<Self> {
        match endpoint {
            EndpointKind::Tte => Self::tte(id),
            EndpointKind::Continuous => Self::continuous(id),
        }
    }

    pub fn family(&self) -> Family {
        match self.endpoint {
            EndpointKind::Tte => Family::CoxMspline,
            EndpointKind::Continuous => Family::Gaussian,
        }
    }

    pub fn assumptions(&self) -> TrialAssumptions {
        TrialAssumptions {
            delta_plan: self.delta_plan,
            sigma_plan: self.sigma_plan,
        }
    }

    /// Subgroup lacking efficacy, if the scenario designates one.
    pub fn null_subgroup(&self) -> Option<(&'static str, &'static str)> {
        match (self.endpoint, self.id) {
            (EndpointKind::Tte, 2) => Some(("x4", "a")),
            (EndpointKind::Continuous, 3) => Some(("x11", "a")),
            _ => None,
        }
    }

    /// Is a larger effect estimate worse for patients? (Hazard ratios: yes.)
    pub fn larger_is_worse(&self) -> bool {
        self.endpoint == EndpointKind::Tte
    }

    pub fn name(&self) -> String {
        let kind = match self.endpoint {
            EndpointKind::Tte => "tte",
            EndpointKind::Continuous => "continuous",
        };
        format!("{kind}-{}", self.id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::config("scenario sample size must be at least 4"));
        }
        if let Some(e) = self.n_events {
            if e == 0 || e > self.n {
                return Err(Error::config(format!(
                    "event target {e} must lie in 1..={}",
                    self.n
                )));
            }
        }
        match (&self.params, self.endpoint) {
            (GeneratorParams::Tte(p), EndpointKind::Tte) => {
                for v in &p.variables {
                    generators::thresholds(&v.prevalences)?;
                }
                generators::LatentCopula::new(p.rho, p.variables.len())?;
                p.validate()
            }
            (GeneratorParams::Continuous(p), EndpointKind::Continuous) => {
                if p.beta0.is_finite() && p.beta1.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config(
                        "continuous scenario coefficients must be finite",
                    ))
                }
            }
            _ => Err(Error::config(
                "generator parameters do not match the endpoint",
            )),
        }
    }
}
