//! Data-generating mechanisms for the two simulation studies.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use super::{
    ContinuousParams, EndpointKind, GeneratorParams, SimScenario, TteParams, VariableSpec,
};
use crate::design::{CategoricalVar, Endpoint, TrialDataset};
use crate::error::{Error, Result};
use crate::math::{quantile_sorted, sorted_copy, std_normal_cdf, std_normal_quantile};

/// Exchangeable Gaussian copula: each variable is a threshold of
/// `sqrt(rho) W + sqrt(1 - rho) E_j`.
#[derive(Debug, Clone)]
pub(crate) struct LatentCopula {
    rho: f64,
    dim: usize,
}

impl LatentCopula {
    pub fn new(rho: f64, dim: usize) -> Result<Self> {
        let lower = if dim > 1 {
            -1.0 / (dim as f64 - 1.0)
        } else {
            -1.0
        };
        if !(rho > lower && rho < 1.0) {
            return Err(Error::Generation(format!(
                "exchangeable correlation {rho} is not positive definite for {dim} variables"
            )));
        }
        if rho < 0.0 {
            return Err(Error::Generation(
                "negative exchangeable correlation is not supported".into(),
            ));
        }
        Ok(Self { rho, dim })
    }

    /// One latent standard-normal vector.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let w: f64 = rng.sample(StandardNormal);
        let (a, b) = (self.rho.sqrt(), (1.0 - self.rho).sqrt());
        (0..self.dim)
            .map(|_| a * w + b * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// Standard-normal thresholds that split a latent variable into categories.
pub(crate) fn thresholds(prevalences: &[f64]) -> Result<Vec<f64>> {
    if prevalences.len() < 2 {
        return Err(Error::Generation(
            "a subgrouping variable needs at least two levels".into(),
        ));
    }
    if prevalences.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::Generation(format!(
            "prevalences must lie in (0, 1): {prevalences:?}"
        )));
    }
    let total: f64 = prevalences.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Generation(format!(
            "prevalences sum to {total}, not 1"
        )));
    }
    let mut cum = 0.0;
    Ok(prevalences[..prevalences.len() - 1]
        .iter()
        .map(|p| {
            cum += p;
            std_normal_quantile(cum)
        })
        .collect())
}

fn categorize(latent: f64, cuts: &[f64]) -> usize {
    cuts.iter().take_while(|&&c| latent >= c).count()
}

fn level_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|j| ((b'a' + j as u8) as char).to_string())
        .collect()
}

/// Categorical covariates for `n` subjects drawn through the copula.
pub(crate) fn draw_tte_covariates<R: Rng + ?Sized>(
    vars: &[VariableSpec],
    rho: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let copula = LatentCopula::new(rho, vars.len())?;
    let cuts: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| thresholds(&v.prevalences))
        .collect::<Result<_>>()?;
    let mut codes = vec![Vec::with_capacity(n); vars.len()];
    for _ in 0..n {
        let z = copula.draw(rng);
        for (j, c) in cuts.iter().enumerate() {
            codes[j].push(categorize(z[j], c));
        }
    }
    Ok(codes)
}

impl TteParams {
    /// Linear predictor (log hazard relative to baseline) of one subject.
    pub fn linear_predictor(&self, codes: &[usize], treated: bool) -> f64 {
        let term = |&(v, l, b): &(usize, usize, f64)| if codes[v] == l { b } else { 0.0 };
        let mut lp: f64 = self.prognostic.iter().map(term).sum();
        if treated {
            lp += self.log_hr + self.interactions.iter().map(term).sum::<f64>();
        }
        lp
    }

    /// Survival at time `t` for a subject with linear predictor `lp`.
    pub fn survival(&self, t: f64, lp: f64) -> f64 {
        (-self.baseline_rate * t.powf(self.weibull_shape) * lp.exp()).exp()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.weibull_shape > 0.0
            && self.baseline_rate > 0.0
            && self.accrual >= 0.0
            && self.truth_horizon > 0.0)
        {
            return Err(Error::Generation(
                "Weibull shape, rate and horizon must be positive".into(),
            ));
        }
        for &(v, l, b) in self.prognostic.iter().chain(&self.interactions) {
            let ok = self
                .variables
                .get(v)
                .is_some_and(|s| l < s.prevalences.len());
            if !ok || !b.is_finite() {
                return Err(Error::Generation(format!(
                    "invalid coefficient entry ({v}, {l}, {b})"
                )));
            }
        }
        Ok(())
    }
}

fn balanced_treatment<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<bool> {
    let mut z: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    z.shuffle(rng);
    z
}

fn build_vars(specs: &[VariableSpec], codes: Vec<Vec<usize>>) -> Result<Vec<CategoricalVar>> {
    specs
        .iter()
        .zip(codes)
        .map(|(s, c)| CategoricalVar::new(s.name.clone(), level_names(s.prevalences.len()), c))
        .collect()
}

/// Simulates one event-driven time-to-event trial.
///
/// Subjects enter uniformly over the accrual period; the analysis is cut at
/// the calendar time of the `n_events`-th event.
pub fn generate_tte_trial(scenario: &SimScenario, seed: u64) -> Result<TrialDataset> {
    let GeneratorParams::Tte(p) = &scenario.params else {
        return Err(Error::config("scenario is not a time-to-event scenario"));
    };
    scenario.validate()?;
    let n = scenario.n;
    let n_events = scenario.n_events.unwrap_or(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = draw_tte_covariates(&p.variables, p.rho, n, &mut rng)?;
    let z = balanced_treatment(n, &mut rng);
    let mut entry = Vec::with_capacity(n);
    let mut latent_t = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<usize> = codes.iter().map(|c| c[i]).collect();
        let lp = p.linear_predictor(&row, z[i]);
        let e: f64 = rng.sample(Exp1);
        latent_t.push((e / (p.baseline_rate * lp.exp())).powf(1.0 / p.weibull_shape));
        entry.push(rng.random::<f64>() * p.accrual);
    }
    let calendar: Vec<f64> = entry.iter().zip(&latent_t).map(|(a, t)| a + t).collect();
    let mut sorted = calendar.clone();
    sorted.sort_by(f64::total_cmp);
    let cutoff = sorted[n_events - 1];
    let mut time = Vec::with_capacity(n);
    let mut event = Vec::with_capacity(n);
    for i in 0..n {
        let follow_up = cutoff - entry[i];
        // Compare calendar times so the event count is exact under rounding.
        if calendar[i] <= cutoff {
            time.push(latent_t[i]);
            event.push(true);
        } else {
            time.push(follow_up.max(0.0));
            event.push(false);
        }
    }
    // Subjects entering after the cutoff contribute no follow-up.
    let keep: Vec<usize> = (0..n).filter(|&i| time[i] > 0.0).collect();
    if keep.len() < n {
        return Err(Error::Generation(format!(
            "{} subjects enrolled after the analysis cutoff; lengthen follow-up or shorten accrual",
            n - keep.len()
        )));
    }
    let vars = build_vars(&p.variables, codes)?;
    TrialDataset::new(z, vars, vec![], Endpoint::TimeToEvent { time, event })
}

/// Finite synthetic population for the continuous study.
#[derive(Debug, Clone)]
pub struct ContinuousPopulation {
    /// Raw covariates; binary ones as 0/1.
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x4: Vec<f64>,
    pub x8: Vec<f64>,
    pub x11: Vec<f64>,
    pub x14: Vec<f64>,
    pub x17: Vec<f64>,
    /// Subgroup cut points computed on this population.
    pub x11_median: f64,
    pub x17_median: f64,
    pub x14_cuts: (f64, f64),
}

/// Mean and sd of the Gaussian marginal used for X11.
pub const X11_MEAN: f64 = 0.477;
pub const X11_SD: f64 = 0.150;
pub const CONTINUOUS_RHO: f64 = 0.2;
pub const POPULATION_SIZE: usize = 50_000;
pub const POPULATION_SEED: u64 = 20_240_411;

impl ContinuousPopulation {
    pub fn generate(size: usize, seed: u64) -> Result<Self> {
        if size < 4 {
            return Err(Error::Generation("population too small".into()));
        }
        let copula = LatentCopula::new(CONTINUOUS_RHO, 7)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols: Vec<Vec<_>> = (0..7).map(|_| Vec::with_capacity(size)).collect();
        for _ in 0..size {
            let l = copula.draw(&mut rng);
            cols[0].push(f64::from(u8::from(l[0] >= 0.0)));
            cols[1].push(f64::from(u8::from(l[1] >= 0.0)));
            cols[2].push(f64::from(u8::from(l[2] >= 0.0)));
            cols[3].push(f64::from(u8::from(l[3] >= 0.0)));
            cols[4].push(X11_MEAN + X11_SD * l[4]);
            cols[5].push(l[5].exp());
            cols[6].push(std_normal_cdf(l[6]));
        }
        let mut it = cols.into_iter();
        let mut next = || it.next().expect("seven columns");
        let (x1, x2, x4, x8, x11, x14, x17) =
            (next(), next(), next(), next(), next(), next(), next());
        let s11 = sorted_copy(&x11);
        let s14 = sorted_copy(&x14);
        let s17 = sorted_copy(&x17);
        Ok(Self {
            x11_median: quantile_sorted(&s11, 0.5),
            x17_median: quantile_sorted(&s17, 0.5),
            x14_cuts: (quantile_sorted(&s14, 0.25), quantile_sorted(&s14, 0.5)),
            x1,
            x2,
            x4,
            x8,
            x11,
            x14,
            x17,
        })
    }

    /// The fixed population all continuous trials are sampled from.
    pub fn canonical() -> &'static ContinuousPopulation {
        static POP: OnceLock<ContinuousPopulation> = OnceLock::new();
        POP.get_or_init(|| {
            Self::generate(POPULATION_SIZE, POPULATION_SEED).expect("valid population")
        })
    }

    pub fn len(&self) -> usize {
        self.x1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x1.is_empty()
    }

    /// Prognostic part of the outcome.
    pub fn prognostic(&self, i: usize) -> f64 {
        2.30 * (0.5 * self.x1[i] + self.x11[i])
    }

    /// Conditional treatment effect of subject `i`.
    pub fn effect(&self, i: usize, p: &ContinuousParams) -> f64 {
        p.beta0 + p.beta1 * std_normal_cdf(20.0 * (self.x11[i] - 0.5))
    }

    /// Subgroup level codes of subject `i`, in [`continuous_variable_names`] order.
    pub fn codes(&self, i: usize) -> [usize; 7] {
        let b = |v: f64| usize::from(v >= 0.5);
        let (q1, q2) = self.x14_cuts;
        let x14 = if self.x14[i] < q1 {
            0
        } else if self.x14[i] < q2 {
            1
        } else {
            2
        };
        [
            b(self.x1[i]),
            b(self.x2[i]),
            b(self.x4[i]),
            b(self.x8[i]),
            usize::from(self.x11[i] >= self.x11_median),
            x14,
            usize::from(self.x17[i] >= self.x17_median),
        ]
    }
}

pub fn continuous_variable_names() -> [&'static str; 7] {
    ["x1", "x2", "x4", "x8", "x11", "x14", "x17"]
}

fn continuous_levels(j: usize) -> usize {
    if j == 5 {
        3
    } else {
        2
    }
}

/// Samples a continuous-outcome trial from the canonical population.
pub fn generate_continuous_trial(scenario: &SimScenario, seed: u64) -> Result<TrialDataset> {
    generate_continuous_from(ContinuousPopulation::canonical(), scenario, seed)
}

pub(crate) fn generate_continuous_from(
    pop: &ContinuousPopulation,
    scenario: &SimScenario,
    seed: u64,
) -> Result<TrialDataset> {
    let GeneratorParams::Continuous(p) = &scenario.params else {
        return Err(Error::config(
            "scenario is not a continuous-outcome scenario",
        ));
    };
    scenario.validate()?;
    let n = scenario.n;
    if n > pop.len() {
        return Err(Error::Generation(format!(
            "cannot sample {n} subjects from a population of {}",
            pop.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, pop.len(), n).into_vec();
    let z = balanced_treatment(n, &mut rng);
    let y: Vec<f64> = idx
        .iter()
        .zip(&z)
        .map(|(&i, &zi)| {
            let eps: f64 = rng.sample(StandardNormal);
            pop.prognostic(i) + if zi { pop.effect(i, p) } else { 0.0 } + eps
        })
        .collect();
    let names = continuous_variable_names();
    let vars = (0..7)
        .map(|j| {
            let codes = idx.iter().map(|&i| pop.codes(i)[j]).collect();
            CategoricalVar::new(names[j], level_names(continuous_levels(j)), codes)
        })
        .collect::<Result<Vec<_>>>()?;
    TrialDataset::new(z, vars, vec![], Endpoint::Continuous(y))
}

/// Dispatches on the scenario's endpoint.
pub fn generate_trial(scenario: &SimScenario, seed: u64) -> Result<TrialDataset> {
    match scenario.endpoint {
        EndpointKind::Tte => generate_tte_trial(scenario, seed),
        EndpointKind::Continuous => generate_continuous_trial(scenario, seed),
    }
}
