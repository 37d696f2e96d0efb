//! True marginal subgroup effects from large synthetic populations.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generators::{continuous_variable_names, draw_tte_covariates, ContinuousPopulation};
use super::{GeneratorParams, SimScenario, TteParams};
use crate::error::{Error, Result};
use crate::standardize::average_hazard_ratio;

const N_BATCHES: usize = 10;
const TRUTH_GRID: usize = 2001;

/// Per-subgroup truth on the modeling scale (log-AHR or mean difference).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueEffects {
    /// Labels in subgroup order, e.g. `x4=a`.
    pub labels: Vec<String>,
    pub theta: Vec<f64>,
    /// Monte Carlo standard errors from batch means.
    pub mcse: Vec<f64>,
    pub population: f64,
}

impl TrueEffects {
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Truth for each subgroup (and the whole population) from `n_large` synthetic subjects.
///
/// Time-to-event truth is the log-AHR between the arms' marginal survival
/// curves (no censoring) on [0, truth horizon]; continuous truth is the
/// subgroup mean of the noiseless conditional effect.
pub fn compute_true_effects(
    scenario: &SimScenario,
    n_large: usize,
    seed: u64,
) -> Result<TrueEffects> {
    scenario.validate()?;
    if n_large < 10 * N_BATCHES {
        return Err(Error::config(format!(
            "n_large must be at least {}",
            10 * N_BATCHES
        )));
    }
    match &scenario.params {
        GeneratorParams::Tte(p) => tte_truth(p, n_large, seed),
        GeneratorParams::Continuous(p) => {
            let pop = ContinuousPopulation::generate(n_large, seed)?;
            Ok(continuous_truth(&pop, p))
        }
    }
}

pub(crate) fn continuous_truth(
    pop: &ContinuousPopulation,
    p: &super::ContinuousParams,
) -> TrueEffects {
    let names = continuous_variable_names();
    let mut labels = Vec::new();
    let mut theta = Vec::new();
    let mut mcse = Vec::new();
    let effects: Vec<f64> = (0..pop.len()).map(|i| pop.effect(i, p)).collect();
    let codes: Vec<[usize; 7]> = (0..pop.len()).map(|i| pop.codes(i)).collect();
    for (j, name) in names.iter().enumerate() {
        let n_levels = if j == 5 { 3 } else { 2 };
        for l in 0..n_levels {
            let e: Vec<f64> = (0..pop.len())
                .filter(|&i| codes[i][j] == l)
                .map(|i| effects[i])
                .collect();
            labels.push(format!("{name}={}", (b'a' + l as u8) as char));
            let m = crate::math::mean(&e);
            theta.push(m);
            mcse.push((crate::math::variance(&e) / e.len() as f64).sqrt());
        }
    }
    TrueEffects {
        labels,
        theta,
        mcse,
        population: crate::math::mean(&effects),
    }
}

/// Counts of subjects by (control lp, treated lp) within one group.
type LpCounts = HashMap<(u64, u64), f64>;

fn log_ahr_of(p: &TteParams, counts: &LpCounts, grid: &[f64]) -> Result<f64> {
    let total: f64 = counts.values().sum();
    let mut entries: Vec<(&(u64, u64), &f64)> = counts.iter().collect();
    entries.sort_by_key(|(k, _)| **k);
    let curve = |arm: usize| -> Vec<f64> {
        grid.iter()
            .map(|&t| {
                entries
                    .iter()
                    .map(|(k, c)| {
                        let lp = f64::from_bits(if arm == 0 { k.0 } else { k.1 });
                        *c * p.survival(t, lp)
                    })
                    .sum::<f64>()
                    / total
            })
            .collect()
    };
    Ok(average_hazard_ratio(&curve(0), &curve(1))?.ln())
}

fn tte_truth(p: &TteParams, n_large: usize, seed: u64) -> Result<TrueEffects> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = draw_tte_covariates(&p.variables, p.rho, n_large, &mut rng)?;
    let grid: Vec<f64> = (0..TRUTH_GRID)
        .map(|j| p.truth_horizon * j as f64 / (TRUTH_GRID - 1) as f64)
        .collect();
    let mut groups: Vec<(String, usize, usize)> = Vec::new();
    for (j, v) in p.variables.iter().enumerate() {
        for l in 0..v.prevalences.len() {
            groups.push((format!("{}={}", v.name, (b'a' + l as u8) as char), j, l));
        }
    }
    // [batch][group + population]
    let k = groups.len();
    let mut counts: Vec<Vec<LpCounts>> = vec![vec![LpCounts::new(); k + 1]; N_BATCHES];
    let batch_size = n_large.div_ceil(N_BATCHES);
    let mut row = vec![0usize; p.variables.len()];
    for i in 0..n_large {
        for (j, c) in codes.iter().enumerate() {
            row[j] = c[i];
        }
        let key = (
            p.linear_predictor(&row, false).to_bits(),
            p.linear_predictor(&row, true).to_bits(),
        );
        let b = i / batch_size;
        for (g, &(_, j, l)) in groups.iter().enumerate() {
            if row[j] == l {
                *counts[b][g].entry(key).or_default() += 1.0;
            }
        }
        *counts[b][k].entry(key).or_default() += 1.0;
    }
    let merged: Vec<LpCounts> = (0..=k)
        .map(|g| {
            let mut m = LpCounts::new();
            for batch in &counts {
                for (key, c) in &batch[g] {
                    *m.entry(*key).or_default() += c;
                }
            }
            m
        })
        .collect();
    let mut theta = Vec::with_capacity(k);
    let mut mcse = Vec::with_capacity(k);
    for g in 0..k {
        theta.push(log_ahr_of(p, &merged[g], &grid)?);
        let per_batch: Vec<f64> = counts
            .iter()
            .filter(|b| !b[g].is_empty())
            .map(|b| log_ahr_of(p, &b[g], &grid))
            .collect::<Result<_>>()?;
        mcse.push((crate::math::variance(&per_batch) / per_batch.len() as f64).sqrt());
    }
    Ok(TrueEffects {
        labels: groups.into_iter().map(|g| g.0).collect(),
        theta,
        mcse,
        population: log_ahr_of(p, &merged[k], &grid)?,
    })
}
