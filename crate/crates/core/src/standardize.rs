//! G-computation from posterior draws to marginal subgroup treatment effects.
//!
//! For each draw every subject of a subgroup (from both arms) is predicted
//! under control and under treatment, predictions are averaged within the
//! subgroup, and the averages are contrasted on the family's natural scale.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{Endpoint, Family, SubgroupId, TrialDataset};
use crate::engine::FittedModel;
use crate::error::{Error, Result};
use crate::likelihoods::Patterns;
use crate::math::{logistic, quantile_sorted, sorted_copy};

/// Scale on which a treatment effect is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectScale {
    MeanDifference,
    OddsRatio,
    RateRatio,
    AverageHazardRatio,
}

impl EffectScale {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Gaussian => EffectScale::MeanDifference,
            Family::BernoulliLogit => EffectScale::OddsRatio,
            Family::NegativeBinomial => EffectScale::RateRatio,
            Family::CoxMspline => EffectScale::AverageHazardRatio,
        }
    }

    pub fn is_ratio(self) -> bool {
        self != EffectScale::MeanDifference
    }

    /// The null effect (0 or 1).
    pub fn null_value(self) -> f64 {
        if self.is_ratio() {
            1.0
        } else {
            0.0
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EffectScale::MeanDifference => "mean_difference",
            EffectScale::OddsRatio => "odds_ratio",
            EffectScale::RateRatio => "rate_ratio",
            EffectScale::AverageHazardRatio => "average_hazard_ratio",
        }
    }
}

/// Posterior summary of one subgroup's marginal treatment effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupEffect {
    pub subgroup: SubgroupId,
    pub label: String,
    pub scale: EffectScale,
    /// Posterior median.
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_subjects: usize,
    pub estimator_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<Vec<f64>>,
}

impl SubgroupEffect {
    pub fn to_row(&self) -> ForestRow {
        ForestRow {
            subgroup: self.label.clone(),
            n: self.n_subjects,
            scale: self.scale,
            point: self.point,
            lower: self.lower,
            upper: self.upper,
            estimator_label: self.estimator_label.clone(),
        }
    }
}

/// Flat forest-table record used for CSV and JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRow {
    pub subgroup: String,
    pub n: usize,
    pub scale: EffectScale,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub estimator_label: String,
}

pub fn write_forest_csv<W: Write>(rows: &[ForestRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_forest_json<W: Write>(rows: &[ForestRow], writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, rows)?;
    Ok(())
}

/// Time points on which survival curves are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeGrid {
    /// Sorted unique event times plus this many equally spaced points on [0, last event time].
    EventTimesPlusUniform(usize),
    /// Equally spaced points on [0, last event time].
    Uniform(usize),
    Explicit(Vec<f64>),
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid::EventTimesPlusUniform(512)
    }
}

impl TimeGrid {
    /// Resolves the grid for a dataset; always starts at 0.
    pub fn resolve(&self, dataset: &TrialDataset) -> Result<Vec<f64>> {
        let events: Vec<f64> = match dataset.endpoint() {
            Endpoint::TimeToEvent { time, event } => time
                .iter()
                .zip(event)
                .filter(|(_, &e)| e)
                .map(|(&t, _)| t)
                .collect(),
            _ => Vec::new(),
        };
        let tau = events.iter().copied().fold(f64::NAN, f64::max);
        let uniform = |m: usize| -> Result<Vec<f64>> {
            if !(tau > 0.0) {
                return Err(Error::invalid(
                    "survival grid needs at least one event at a positive time",
                ));
            }
            let m = m.max(2);
            Ok((0..m).map(|j| tau * j as f64 / (m - 1) as f64).collect())
        };
        let mut grid = match self {
            TimeGrid::EventTimesPlusUniform(m) => {
                let mut g = uniform(*m)?;
                g.extend(events.iter().copied());
                g
            }
            TimeGrid::Uniform(m) => uniform(*m)?,
            TimeGrid::Explicit(g) => {
                if g.iter().any(|t| !t.is_finite() || *t < 0.0) {
                    return Err(Error::config(
                        "explicit survival grid must hold finite non-negative times",
                    ));
                }
                let mut g = g.clone();
                g.push(0.0);
                g
            }
        };
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        if grid.len() < 2 {
            return Err(Error::config(
                "survival grid needs at least two distinct times",
            ));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StandardizeOptions {
    pub grid: TimeGrid,
    /// Use at most this many (evenly spaced) posterior draws.
    pub max_draws: Option<usize>,
    pub keep_draws: bool,
    /// Central interval probability.
    pub level: f64,
}

impl Default for StandardizeOptions {
    fn default() -> Self {
        Self {
            grid: TimeGrid::default(),
            max_draws: None,
            keep_draws: false,
            level: 0.95,
        }
    }
}

/// Median and central `level` interval of a set of draws.
pub fn posterior_summary(draws: &[f64], level: f64) -> Result<(f64, f64, f64)> {
    if draws.is_empty() {
        return Err(Error::invalid("cannot summarize zero draws"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!(
            "interval level must lie in (0, 1), got {level}"
        )));
    }
    if draws.iter().any(|d| d.is_nan()) {
        return Err(Error::NonFinite("effect draws"));
    }
    let s = sorted_copy(draws);
    let a = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&s, 0.5),
        quantile_sorted(&s, a),
        quantile_sorted(&s, 1.0 - a),
    ))
}

fn check_curve(s: &[f64], name: &str) -> Result<()> {
    const TOL: f64 = 1e-12;
    if s.iter()
        .any(|v| !v.is_finite() || *v < -TOL || *v > 1.0 + TOL)
    {
        return Err(Error::invalid(format!(
            "{name} survival curve has values outside [0, 1]"
        )));
    }
    if (s[0] - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "{name} survival curve does not start at 1"
        )));
    }
    if s.windows(2).any(|w| w[1] > w[0] + TOL) {
        return Err(Error::invalid(format!(
            "{name} survival curve is not nonincreasing"
        )));
    }
    Ok(())
}

/// Trapezoidal Stieltjes sum of ∫ a dF_b with F_b = 1 − b.
fn concordance(a: &[f64], b: &[f64]) -> f64 {
    a.windows(2)
        .zip(b.windows(2))
        .map(|(wa, wb)| 0.5 * (wa[0] + wa[1]) * (wb[0] - wb[1]))
        .sum()
}

/// Average hazard ratio of two survival curves on a shared grid starting at time 0.
///
/// Computed as the odds of concordance ∫ S_ctrl dF_trt / ∫ S_trt dF_ctrl, which
/// equals the hazard ratio when hazards are proportional.
pub fn average_hazard_ratio(s_ctrl: &[f64], s_trt: &[f64]) -> Result<f64> {
    if s_ctrl.len() != s_trt.len() {
        return Err(Error::Dimension {
            context: "survival curves",
            expected: s_ctrl.len(),
            got: s_trt.len(),
        });
    }
    if s_ctrl.len() < 2 {
        return Err(Error::invalid(
            "survival curves need at least two grid points",
        ));
    }
    check_curve(s_ctrl, "control")?;
    check_curve(s_trt, "treatment")?;
    let num = concordance(s_ctrl, s_trt);
    let den = concordance(s_trt, s_ctrl);
    if num == den {
        return Ok(1.0);
    }
    if !(num > 0.0 && den > 0.0) {
        return Err(Error::Numerical(
            "average hazard ratio undefined: one arm has no events on the grid".into(),
        ));
    }
    Ok(num / den)
}

/// Evenly spaced subset of draw indices.
fn draw_indices(total: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m > 0 && m < total => (0..m).map(|j| j * total / m).collect(),
        _ => (0..total).collect(),
    }
}

/// Pattern weights of one subgroup under each hypothetical arm.
struct SubgroupWeights {
    ctrl: Vec<(usize, f64)>,
    trt: Vec<(usize, f64)>,
}

fn pattern_weights(patterns: &Patterns, members: &[usize]) -> Vec<(usize, f64)> {
    let mut counts = vec![0usize; patterns.len()];
    for &i in members {
        counts[patterns.row_pattern[i]] += 1;
    }
    let n = members.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .filter(|(_, c)| *c > 0)
        .map(|(g, c)| (g, c as f64 / n))
        .collect()
}

struct Standardizer<'a> {
    fit: &'a FittedModel,
    ctrl: Patterns,
    trt: Patterns,
    groups: Vec<SubgroupWeights>,
    grid: Vec<f64>,
    /// Integrated basis values at each grid point (Cox only).
    ibasis: Vec<Vec<f64>>,
}

impl<'a> Standardizer<'a> {
    fn new(fit: &'a FittedModel, subgroups: &[SubgroupId], grid: &TimeGrid) -> Result<Self> {
        let ctrl = Patterns::build(&fit.design, Some(0.0));
        let trt = Patterns::build(&fit.design, Some(1.0));
        let mut groups = Vec::with_capacity(subgroups.len());
        for &id in subgroups {
            let members = fit.dataset.members(id)?;
            if members.is_empty() {
                return Err(Error::invalid(format!(
                    "subgroup `{}` has no subjects",
                    fit.dataset.subgroup_label(id)
                )));
            }
            groups.push(SubgroupWeights {
                ctrl: pattern_weights(&ctrl, &members),
                trt: pattern_weights(&trt, &members),
            });
        }
        let (grid, ibasis) = if fit.family() == Family::CoxMspline {
            let basis = fit
                .mspline
                .as_ref()
                .ok_or_else(|| Error::invalid("Cox fit carries no baseline hazard basis"))?;
            let g = grid.resolve(&fit.dataset)?;
            let ib = g.iter().map(|&t| basis.integrated_eval(t)).collect();
            (g, ib)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Self {
            fit,
            ctrl,
            trt,
            groups,
            grid,
            ibasis,
        })
    }

    fn baseline_cumhaz(&self, row: usize) -> Vec<f64> {
        let aux = self.fit.aux(row);
        let (amp, w) = (aux[0], &aux[1..]);
        self.ibasis
            .iter()
            .map(|ib| amp * ib.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    fn pattern_curves(&self, patterns: &Patterns, coefs: &[f64], h0: &[f64]) -> Vec<Vec<f64>> {
        (0..patterns.len())
            .map(|g| {
                let rr = patterns.lp(g, coefs).exp();
                h0.iter().map(|h| (-h * rr).exp()).collect()
            })
            .collect()
    }

    fn average_curve(curves: &[Vec<f64>], weights: &[(usize, f64)], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for &(g, w) in weights {
            for (o, s) in out.iter_mut().zip(&curves[g]) {
                *o += w * s;
            }
        }
        out
    }

    /// Marginal survival curves of every subgroup under both arms for one draw.
    fn curves(&self, row: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let coefs = self.fit.coefficients(row);
        let h0 = self.baseline_cumhaz(row);
        let c0 = self.pattern_curves(&self.ctrl, coefs, &h0);
        let c1 = self.pattern_curves(&self.trt, coefs, &h0);
        let m = self.grid.len();
        self.groups
            .iter()
            .map(|gw| {
                (
                    Self::average_curve(&c0, &gw.ctrl, m),
                    Self::average_curve(&c1, &gw.trt, m),
                )
            })
            .collect()
    }

    fn means(
        &self,
        patterns: &Patterns,
        weights: &[(usize, f64)],
        coefs: &[f64],
        inv_link: fn(f64) -> f64,
    ) -> f64 {
        weights
            .iter()
            .map(|&(g, w)| w * inv_link(patterns.lp(g, coefs)))
            .sum()
    }

    /// Effects of every subgroup for one draw.
    fn effects(&self, row: usize) -> Result<Vec<f64>> {
        let coefs = self.fit.coefficients(row);
        let family = self.fit.family();
        if family == Family::CoxMspline {
            return self
                .curves(row)
                .iter()
                .map(|(s0, s1)| average_hazard_ratio(s0, s1))
                .collect();
        }
        let inv_link: fn(f64) -> f64 = match family {
            Family::Gaussian => |x| x,
            Family::BernoulliLogit => logistic,
            _ => f64::exp,
        };
        self.groups
            .iter()
            .map(|gw| {
                let m0 = self.means(&self.ctrl, &gw.ctrl, coefs, inv_link);
                let m1 = self.means(&self.trt, &gw.trt, coefs, inv_link);
                let eff = match family {
                    Family::Gaussian => m1 - m0,
                    Family::BernoulliLogit => (m1 / (1.0 - m1)) / (m0 / (1.0 - m0)),
                    _ => m1 / m0,
                };
                if eff.is_finite() {
                    Ok(eff)
                } else {
                    Err(Error::NonFinite("standardized effect"))
                }
            })
            .collect()
    }
}

/// Per-subgroup effect draws (outer index follows `subgroups`).
pub fn effect_draws(
    fit: &FittedModel,
    subgroups: &[SubgroupId],
    options: &StandardizeOptions,
) -> Result<Vec<Vec<f64>>> {
    let st = Standardizer::new(fit, subgroups, &options.grid)?;
    let rows = draw_indices(fit.draws.n_total(), options.max_draws);
    let per_draw: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&r| st.effects(r))
        .collect::<Result<_>>()?;
    Ok((0..subgroups.len())
        .map(|k| per_draw.iter().map(|d| d[k]).collect())
        .collect())
}

/// Marginal survival curve draws of a subgroup under one hypothetical arm.
///
/// Beyond the last spline knot the baseline hazard is held constant.
pub fn marginal_survival(
    fit: &FittedModel,
    subgroup: SubgroupId,
    treated: bool,
    grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if fit.family() != Family::CoxMspline {
        return Err(Error::config("marginal survival curves require a Cox fit"));
    }
    if grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::config(
            "survival grid must hold finite non-negative times",
        ));
    }
    let st = Standardizer::new(fit, &[subgroup], &TimeGrid::Explicit(grid.to_vec()))?;
    // The resolved grid is sorted, deduplicated and includes 0; map back to the caller's points.
    let pos: Vec<usize> = grid
        .iter()
        .map(|t| {
            st.grid
                .binary_search_by(|g| g.total_cmp(t))
                .expect("grid point present")
        })
        .collect();
    let curves: Vec<Vec<f64>> = (0..fit.draws.n_total())
        .into_par_iter()
        .map(|r| {
            let (s0, s1) = st.curves(r).swap_remove(0);
            let s = if treated { s1 } else { s0 };
            pos.iter().map(|&p| s[p]).collect()
        })
        .collect();
    Ok(curves)
}

/// Summaries for several subgroups of one fit.
pub fn standardized_effects(
    fit: &FittedModel,
    subgroups: &[SubgroupId],
    estimator_label: &str,
    options: &StandardizeOptions,
) -> Result<Vec<SubgroupEffect>> {
    let draws = effect_draws(fit, subgroups, options)?;
    let scale = EffectScale::for_family(fit.family());
    subgroups
        .iter()
        .zip(draws)
        .map(|(&id, d)| {
            let (point, lower, upper) = posterior_summary(&d, options.level)?;
            Ok(SubgroupEffect {
                subgroup: id,
                label: fit.dataset.subgroup_label(id),
                scale,
                point,
                lower,
                upper,
                n_subjects: fit.dataset.members(id)?.len(),
                estimator_label: estimator_label.to_string(),
                draws: options.keep_draws.then_some(d),
            })
        })
        .collect()
}

/// Standardized effect of a single subgroup with default options.
pub fn standardized_effect(fit: &FittedModel, subgroup: SubgroupId) -> Result<SubgroupEffect> {
    let mut out = standardized_effects(
        fit,
        &[subgroup],
        "shrinkage",
        &StandardizeOptions::default(),
    )?;
    Ok(out.remove(0))
}

/// Which rows a forest table contains (the population row is always first).
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ForestRequest {
    #[default]
    All,
    /// Explicit (variable, level) pairs; each variable needs at least two levels.
    Levels(Vec<(String, String)>),
}

impl ForestRequest {
    pub fn resolve(&self, dataset: &TrialDataset) -> Result<Vec<SubgroupId>> {
        let mut ids = vec![SubgroupId::Population];
        match self {
            ForestRequest::All => ids.extend(dataset.subgroups()),
            ForestRequest::Levels(pairs) => {
                let mut per_var: Vec<(usize, usize)> = Vec::new();
                for (var, level) in pairs {
                    let j = dataset.variable_index(var).ok_or_else(|| {
                        Error::config(format!("unknown subgroup variable `{var}`"))
                    })?;
                    let l = dataset.subgroup_vars()[j]
                        .level_index(level)
                        .ok_or_else(|| {
                            Error::config(format!("unknown level `{level}` of `{var}`"))
                        })?;
                    let id = SubgroupId::Level {
                        variable: j,
                        level: l,
                    };
                    if !ids.contains(&id) {
                        ids.push(id);
                        match per_var.iter_mut().find(|(v, _)| *v == j) {
                            Some(e) => e.1 += 1,
                            None => per_var.push((j, 1)),
                        }
                    }
                }
                if let Some((j, _)) = per_var.iter().find(|(_, c)| *c < 2) {
                    return Err(Error::config(format!(
                        "forest request for `{}` names a single level; at least two are required",
                        dataset.subgroup_vars()[*j].name
                    )));
                }
            }
        }
        Ok(ids)
    }
}

/// Population row followed by one row per requested subgroup level.
pub fn forest_table(
    fit: &FittedModel,
    request: &ForestRequest,
    estimator_label: &str,
    options: &StandardizeOptions,
) -> Result<Vec<SubgroupEffect>> {
    let ids = request.resolve(&fit.dataset)?;
    standardized_effects(fit, &ids, estimator_label, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, CategoricalVar, ModelSpec, TrialAssumptions};
    use crate::likelihoods::baseline_cumulative_hazard;
    use crate::priors::PriorConfig;
    use crate::testutil::{random_dataset, Kind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assumptions() -> TrialAssumptions {
        TrialAssumptions {
            delta_plan: 0.5,
            sigma_plan: Some(1.0),
        }
    }

    /// Random fixed-parameter fit with `n_draws` rows.
    fn fixed_fit(data: &TrialDataset, spec: &ModelSpec, n_draws: usize, seed: u64) -> FittedModel {
        let design = build_design(data, spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_aux = crate::engine::ShrinkageModel::new(data, &design, spec)
            .unwrap()
            .likelihood()
            .aux_constrained_labels()
            .len();
        let rows = (0..n_draws)
            .map(|_| {
                let mut r: Vec<f64> = (0..design.n_columns())
                    .map(|_| rng.random_range(-0.8..0.8))
                    .collect();
                if spec.family == Family::CoxMspline {
                    r.push(rng.random_range(0.3..1.5));
                    let w: Vec<f64> = (1..n_aux).map(|_| rng.random_range(0.1..1.0)).collect();
                    let s: f64 = w.iter().sum();
                    r.extend(w.iter().map(|v| v / s));
                } else if n_aux == 1 {
                    r.push(rng.random_range(0.5..2.0));
                }
                r
            })
            .collect();
        FittedModel::from_parameter_draws(data, spec, rows).unwrap()
    }

    fn event_times(data: &TrialDataset) -> Vec<f64> {
        match data.endpoint() {
            Endpoint::TimeToEvent { time, event } => time
                .iter()
                .zip(event)
                .filter(|(_, &e)| e)
                .map(|(&t, _)| t)
                .collect(),
            _ => unreachable!(),
        }
    }

    fn keep() -> StandardizeOptions {
        StandardizeOptions {
            keep_draws: true,
            ..Default::default()
        }
    }

    #[test]
    fn gaussian_without_interactions_recovers_treatment_coefficient() {
        let data = random_dataset(Kind::Continuous, 60, &[], 1);
        let mut spec = ModelSpec::global(Family::Gaussian, PriorConfig::default(), assumptions());
        spec.adjust_for = vec!["age".into()];
        let fit = fixed_fit(&data, &spec, 20, 2);
        let d = effect_draws(&fit, &[SubgroupId::Population], &keep()).unwrap();
        let tcol = fit.design.treatment_column();
        for (r, e) in d[0].iter().enumerate() {
            assert!((e - fit.coefficients(r)[tcol]).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_population_effect_is_weighted_mean_of_complements() {
        let data = random_dataset(Kind::Continuous, 80, &[2, 3], 3);
        let spec = ModelSpec::global(Family::Gaussian, PriorConfig::default(), assumptions());
        let fit = fixed_fit(&data, &spec, 25, 4);
        let ids = [
            SubgroupId::Population,
            SubgroupId::Level {
                variable: 0,
                level: 0,
            },
            SubgroupId::Level {
                variable: 0,
                level: 1,
            },
        ];
        let d = effect_draws(&fit, &ids, &keep()).unwrap();
        let na = data.members(ids[1]).unwrap().len() as f64;
        let nb = data.members(ids[2]).unwrap().len() as f64;
        for r in 0..25 {
            let pooled = (na * d[1][r] + nb * d[2][r]) / (na + nb);
            assert!((d[0][r] - pooled).abs() < 1e-10);
        }
    }

    #[test]
    fn bernoulli_subgroup_odds_ratio_matches_enumeration() {
        let data = random_dataset(Kind::Binary, 70, &[2], 5);
        let spec = ModelSpec::one_way(
            Family::BernoulliLogit,
            "x1",
            PriorConfig::default(),
            assumptions(),
        );
        let fit = fixed_fit(&data, &spec, 5, 6);
        let id = SubgroupId::Level {
            variable: 0,
            level: 1,
        };
        let d = effect_draws(&fit, &[id], &keep()).unwrap();
        let members = data.members(id).unwrap();
        for r in 0..5 {
            let lp0 = fit
                .design
                .linear_predictor(fit.coefficients(r), Some(false))
                .unwrap();
            let lp1 = fit
                .design
                .linear_predictor(fit.coefficients(r), Some(true))
                .unwrap();
            let p = |lp: &[f64]| {
                members
                    .iter()
                    .map(|&i| 1.0 / (1.0 + (-lp[i]).exp()))
                    .sum::<f64>()
                    / members.len() as f64
            };
            let (p0, p1) = (p(&lp0), p(&lp1));
            let or = (p1 / (1.0 - p1)) / (p0 / (1.0 - p0));
            assert!((d[0][r] - or).abs() < 1e-12 * or);
        }
    }

    #[test]
    fn count_rate_ratio_matches_enumeration_with_exposure() {
        let data = random_dataset(Kind::Count, 50, &[3], 7);
        let spec = ModelSpec::one_way(
            Family::NegativeBinomial,
            "x1",
            PriorConfig::default(),
            assumptions(),
        );
        let fit = fixed_fit(&data, &spec, 4, 8);
        let d = effect_draws(&fit, &[SubgroupId::Population], &keep()).unwrap();
        for r in 0..4 {
            let lp0 = fit
                .design
                .linear_predictor(fit.coefficients(r), Some(false))
                .unwrap();
            let lp1 = fit
                .design
                .linear_predictor(fit.coefficients(r), Some(true))
                .unwrap();
            let m0: f64 = lp0.iter().map(|v| v.exp()).sum();
            let m1: f64 = lp1.iter().map(|v| v.exp()).sum();
            assert!((d[0][r] - m1 / m0).abs() < 1e-12 * d[0][r]);
        }
    }

    #[test]
    fn bernoulli_population_odds_ratio_is_not_collapsible() {
        let n = 400;
        let x1 = CategoricalVar::new(
            "x1",
            vec!["a".into(), "b".into()],
            (0..n).map(|i| (i / 2) % 2).collect(),
        )
        .unwrap();
        let data = TrialDataset::new(
            (0..n).map(|i| i % 2 == 0).collect(),
            vec![x1],
            vec![],
            Endpoint::Binary((0..n).map(|i| i % 3 == 0).collect()),
        )
        .unwrap();
        let mut spec = ModelSpec::global(
            Family::BernoulliLogit,
            PriorConfig::default(),
            assumptions(),
        );
        spec.adjust_for = vec!["x1".into()];
        let design = build_design(&data, &spec).unwrap();
        // Conditional log-OR of 1 for everyone, strong prognostic effect, no interactions.
        let mut coefs = vec![0.0; design.n_columns()];
        for (c, info) in design.columns().iter().enumerate() {
            if info.label == "treatment" {
                coefs[c] = 1.0;
            } else if !info.interacts_with_treatment && info.level.as_deref() == Some("b") {
                coefs[c] = 3.0;
            } else if info.label == "intercept" {
                coefs[c] = -1.5;
            }
        }
        let fit = FittedModel::from_parameter_draws(&data, &spec, vec![coefs]).unwrap();
        let d = effect_draws(&fit, &[SubgroupId::Population], &keep()).unwrap();
        assert!(
            (d[0][0] - 1f64.exp()).abs() > 1e-3,
            "marginal OR {}",
            d[0][0]
        );
        assert!(d[0][0] < 1f64.exp());
    }

    fn tte_data(levels: Vec<usize>) -> TrialDataset {
        let n = levels.len();
        let x1 =
            CategoricalVar::new("x1", vec!["a".into(), "b".into(), "c".into()], levels).unwrap();
        TrialDataset::new(
            (0..n).map(|i| i % 2 == 0).collect(),
            vec![x1],
            vec![],
            Endpoint::TimeToEvent {
                time: (0..n)
                    .map(|i| 0.1 + 3.0 * ((i * 37) % n) as f64 / n as f64)
                    .collect(),
                event: (0..n).map(|i| i % 4 != 3).collect(),
            },
        )
        .unwrap()
    }

    #[test]
    fn cox_curves_start_at_one_and_match_hand_average() {
        // Level "c" has exactly two subjects, level "b" one.
        let mut levels: Vec<usize> = vec![0; 40];
        levels[3] = 2;
        levels[10] = 2;
        levels[5] = 1;
        let data = tte_data(levels);
        let spec = ModelSpec::one_way(
            Family::CoxMspline,
            "x1",
            PriorConfig::default(),
            assumptions(),
        );
        let fit = fixed_fit(&data, &spec, 3, 9);
        let grid: Vec<f64> = (0..10).map(|j| 0.4 * j as f64).collect();
        let basis = fit.mspline.as_ref().unwrap();
        let subject_curve = |r: usize, i: usize, z: bool| -> Vec<f64> {
            let lp = fit
                .design
                .linear_predictor(fit.coefficients(r), Some(z))
                .unwrap()[i];
            let aux = fit.aux(r);
            grid.iter()
                .map(|&t| {
                    (-baseline_cumulative_hazard(basis, aux[0], &aux[1..], t) * lp.exp()).exp()
                })
                .collect()
        };
        for z in [false, true] {
            let two = marginal_survival(
                &fit,
                SubgroupId::Level {
                    variable: 0,
                    level: 2,
                },
                z,
                &grid,
            )
            .unwrap();
            let one = marginal_survival(
                &fit,
                SubgroupId::Level {
                    variable: 0,
                    level: 1,
                },
                z,
                &grid,
            )
            .unwrap();
            for r in 0..3 {
                assert_eq!(two[r][0], 1.0);
                let (a, b) = (subject_curve(r, 3, z), subject_curve(r, 10, z));
                for j in 0..10 {
                    assert!((two[r][j] - 0.5 * (a[j] + b[j])).abs() < 1e-12);
                }
                let c = subject_curve(r, 5, z);
                for j in 0..10 {
                    assert!((one[r][j] - c[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cox_without_covariate_effects_gives_equal_subgroup_ahr() {
        let data = tte_data((0..60).map(|i| i % 3).collect());
        let spec = ModelSpec::global(Family::CoxMspline, PriorConfig::default(), assumptions());
        let mut fit = fixed_fit(&data, &spec, 4, 10);
        let tcol = fit.design.treatment_column();
        let d = fit.design.n_columns();
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|r| {
                let mut row = fit.draws.draw(r).to_vec();
                for (c, v) in row.iter_mut().enumerate().take(d) {
                    if c != tcol {
                        *v = 0.0;
                    }
                }
                row
            })
            .collect();
        fit = FittedModel::from_parameter_draws(&data, &spec, rows).unwrap();
        let ids = ForestRequest::All.resolve(&data).unwrap();
        let e = effect_draws(&fit, &ids, &keep()).unwrap();
        for k in 1..ids.len() {
            for (a, b) in e[k].iter().zip(&e[0]) {
                assert!((a - b).abs() < 1e-12 * b);
            }
        }
    }

    #[test]
    fn ahr_of_proportional_exponential_curves_is_hazard_ratio() {
        let grid: Vec<f64> = (0..2000).map(|j| 8.0 * j as f64 / 1999.0).collect();
        let sc: Vec<f64> = grid.iter().map(|t| (-t).exp()).collect();
        let st: Vec<f64> = grid.iter().map(|t| (-0.5 * t).exp()).collect();
        let ahr = average_hazard_ratio(&sc, &st).unwrap();
        assert!((ahr - 0.5).abs() < 1e-3 * 0.5, "{ahr}");
    }

    #[test]
    fn ahr_symmetry_properties() {
        let grid: Vec<f64> = (0..300).map(|j| 3.0 * j as f64 / 299.0).collect();
        let sc: Vec<f64> = grid.iter().map(|t| (-t * t / 2.0).exp()).collect();
        let st: Vec<f64> = grid.iter().map(|t| 0.7 * (-t).exp() + 0.3).collect();
        assert_eq!(average_hazard_ratio(&sc, &sc).unwrap(), 1.0);
        let a = average_hazard_ratio(&sc, &st).unwrap();
        let b = average_hazard_ratio(&st, &sc).unwrap();
        assert!((a * b - 1.0).abs() < 1e-15);
        let flat = vec![1.0; 10];
        assert_eq!(average_hazard_ratio(&flat, &flat).unwrap(), 1.0);
    }

    #[test]
    fn ahr_rejects_bad_curves() {
        let ok = [1.0, 0.8, 0.5];
        assert!(average_hazard_ratio(&[1.0, 0.5, 0.6], &ok).is_err());
        assert!(average_hazard_ratio(&ok, &[0.9, 0.8, 0.5]).is_err());
        assert!(average_hazard_ratio(&ok, &[1.0, 0.5]).is_err());
        assert!(average_hazard_ratio(&ok, &[1.0, f64::NAN, 0.1]).is_err());
    }

    #[test]
    fn forest_table_rows_and_requests() {
        let data = random_dataset(Kind::Continuous, 90, &[2, 3, 2], 11);
        let spec = ModelSpec::global(Family::Gaussian, PriorConfig::default(), assumptions());
        let fit = fixed_fit(&data, &spec, 30, 12);
        let rows = forest_table(
            &fit,
            &ForestRequest::All,
            "global",
            &StandardizeOptions::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[0].label, "population");
        assert_eq!(rows[0].n_subjects, 90);
        for r in &rows {
            assert!(r.lower <= r.point && r.point <= r.upper);
            assert_eq!(r.scale, EffectScale::MeanDifference);
        }
        let single = ForestRequest::Levels(vec![("x2".into(), "a".into())]);
        assert!(matches!(single.resolve(&data), Err(Error::Config(_))));
        let two = ForestRequest::Levels(vec![("x2".into(), "a".into()), ("x2".into(), "c".into())]);
        assert_eq!(two.resolve(&data).unwrap().len(), 3);
        assert!(ForestRequest::Levels(vec![("nope".into(), "a".into())])
            .resolve(&data)
            .is_err());
    }

    #[test]
    fn ratio_scales_are_positive_and_serialize() {
        let data = random_dataset(Kind::Tte, 60, &[2], 13);
        let spec = ModelSpec::one_way(
            Family::CoxMspline,
            "x1",
            PriorConfig::default(),
            assumptions(),
        );
        let fit = fixed_fit(&data, &spec, 10, 14);
        let opts = StandardizeOptions {
            grid: TimeGrid::Uniform(64),
            ..Default::default()
        };
        let rows = forest_table(&fit, &ForestRequest::All, "one-way", &opts).unwrap();
        assert!(rows
            .iter()
            .all(|r| r.lower > 0.0 && r.scale == EffectScale::AverageHazardRatio));
        let flat: Vec<ForestRow> = rows.iter().map(|r| r.to_row()).collect();
        let mut buf = Vec::new();
        write_forest_csv(&flat, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("subgroup,n,scale,point,lower,upper,estimator_label\n"));
        assert!(text.contains("x1=a,"));
        assert!(text.contains("average_hazard_ratio"));
        let mut js = Vec::new();
        write_forest_json(&flat, &mut js).unwrap();
        let back: Vec<ForestRow> = serde_json::from_slice(&js).unwrap();
        assert_eq!(back, flat);
    }

    #[test]
    fn grid_contains_event_times_and_uniform_points() {
        let data = random_dataset(Kind::Tte, 30, &[2], 15);
        let g = TimeGrid::default().resolve(&data).unwrap();
        let ev = event_times(&data);
        let tau = ev.iter().copied().fold(0.0, f64::max);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), tau);
        assert!(ev.iter().all(|t| g.contains(t)));
        assert!(g.len() >= 512);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn draw_thinning_is_even() {
        assert_eq!(draw_indices(10, Some(5)), vec![0, 2, 4, 6, 8]);
        assert_eq!(draw_indices(3, Some(5)), vec![0, 1, 2]);
    }

    #[test]
    fn empty_summary_is_an_error() {
        assert!(posterior_summary(&[], 0.95).is_err());
        assert!(posterior_summary(&[1.0], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn wider_level_never_narrows(draws in proptest::collection::vec(-10.0f64..10.0, 1..200)) {
            let (m1, l80, u80) = posterior_summary(&draws, 0.8).unwrap();
            let (m2, l95, u95) = posterior_summary(&draws, 0.95).unwrap();
            prop_assert_eq!(m1, m2);
            prop_assert!(l95 <= l80 && u80 <= u95);
            prop_assert!(l95 <= m1 && m1 <= u95);
        }
    }
}
