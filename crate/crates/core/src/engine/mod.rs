//! Posterior sampling for shrinkage models.
//!
//! [`ShrinkageModel`] composes the likelihood with every prior term on an
//! unconstrained parameter space; [`sample`] runs NUTS chains in parallel with
//! per-chain random streams derived from one seed.

pub mod diagnostics;
mod model;
mod nuts;

pub use model::{log_posterior, ShrinkageModel};
pub use nuts::IterStats;

use std::io::Write;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{build_design, DesignMatrices, Family, ModelSpec, TrialDataset};
use crate::error::{check_finite, Error, Result};
use crate::likelihoods::MSplineBasis;
use nuts::{adaptation_windows, initialize, DualAveraging, Nuts, VarianceEstimator};

/// A differentiable log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density. Non-finite values
    /// mark the point as outside the support.
    fn log_density(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Values reported per draw.
    fn constrained(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn labels(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    /// Defaults to 0.8, or 0.95 for horseshoe models.
    pub target_accept: Option<f64>,
    pub max_tree_depth: usize,
    /// Half-width of the uniform initialization box on the unconstrained scale.
    pub init_radius: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 1000,
            n_draws: 1000,
            target_accept: None,
            max_tree_depth: 10,
            init_radius: 2.0,
            seed: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_draws == 0 || self.max_tree_depth == 0 {
            return Err(Error::config(
                "n_chains, n_draws and max_tree_depth must be positive",
            ));
        }
        if let Some(a) = self.target_accept {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::config("target_accept must lie in (0, 1)"));
            }
        }
        if !(self.init_radius >= 0.0) {
            return Err(Error::config("init_radius must be non-negative"));
        }
        Ok(())
    }
}

/// Summary of sampler behaviour and convergence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerDiagnostics {
    pub rhat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    pub ess_tail: Vec<f64>,
    pub n_divergent: usize,
    pub divergent_fraction: f64,
    pub mean_accept_stat: f64,
    pub step_size: Vec<f64>,
    pub mean_tree_depth: f64,
    pub max_tree_depth_hits: usize,
    pub max_rhat: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Posterior draws on the constrained scale, chains stacked in order.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    labels: Vec<String>,
    n_chains: usize,
    n_draws: usize,
    /// Row-major (n_chains * n_draws) x dim.
    values: Vec<f64>,
    stats: Vec<IterStats>,
    pub diagnostics: SamplerDiagnostics,
}

impl PosteriorDraws {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn n_draws_per_chain(&self) -> usize {
        self.n_draws
    }

    pub fn n_total(&self) -> usize {
        self.n_chains * self.n_draws
    }

    pub fn draw(&self, row: usize) -> &[f64] {
        let d = self.dim();
        &self.values[row * d..(row + 1) * d]
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_total()).map(|r| self.draw(r)[j]).collect()
    }

    /// Draws of column `j` for one chain.
    pub fn chain_column(&self, chain: usize, j: usize) -> Vec<f64> {
        (0..self.n_draws)
            .map(|i| self.draw(chain * self.n_draws + i)[j])
            .collect()
    }

    pub fn stats(&self) -> &[IterStats] {
        &self.stats
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.converged
    }

    /// Writes one row per draw with `chain`, `draw` and the labeled parameter columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for c in 0..self.n_chains {
            for i in 0..self.n_draws {
                let mut rec = vec![c.to_string(), i.to_string()];
                rec.extend(
                    self.draw(c * self.n_draws + i)
                        .iter()
                        .map(|v| format!("{v}")),
                );
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn from_chains(labels: Vec<String>, chains: Vec<(Vec<Vec<f64>>, Vec<IterStats>, f64)>) -> Self {
        let n_chains = chains.len();
        let n_draws = chains[0].0.len();
        let d = labels.len();
        let mut values = Vec::with_capacity(n_chains * n_draws * d);
        let mut stats = Vec::with_capacity(n_chains * n_draws);
        let mut step_size = Vec::with_capacity(n_chains);
        for (draws, st, eps) in chains {
            for row in draws {
                values.extend(row);
            }
            stats.extend(st);
            step_size.push(eps);
        }
        Self {
            labels,
            n_chains,
            n_draws,
            values,
            stats,
            diagnostics: SamplerDiagnostics {
                rhat: vec![],
                ess_bulk: vec![],
                ess_tail: vec![],
                n_divergent: 0,
                divergent_fraction: 0.0,
                mean_accept_stat: 0.0,
                step_size,
                mean_tree_depth: 0.0,
                max_tree_depth_hits: 0,
                max_rhat: f64::NAN,
                converged: true,
                warnings: vec![],
            },
        }
    }

    fn compute_diagnostics(&mut self, max_depth: usize) {
        let d = self.dim();
        let total = self.n_total() as f64;
        let mut rhat = Vec::with_capacity(d);
        let mut ess_b = Vec::with_capacity(d);
        let mut ess_t = Vec::with_capacity(d);
        for j in 0..d {
            let chains: Vec<Vec<f64>> = (0..self.n_chains)
                .map(|c| self.chain_column(c, j))
                .collect();
            let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
            rhat.push(diagnostics::split_rhat(&refs));
            ess_b.push(diagnostics::ess_bulk(&refs));
            ess_t.push(diagnostics::ess_tail(&refs));
        }
        let diag = &mut self.diagnostics;
        diag.n_divergent = self.stats.iter().filter(|s| s.divergent).count();
        diag.divergent_fraction = diag.n_divergent as f64 / total;
        diag.mean_accept_stat = self.stats.iter().map(|s| s.accept_stat).sum::<f64>() / total;
        diag.mean_tree_depth = self.stats.iter().map(|s| s.tree_depth as f64).sum::<f64>() / total;
        diag.max_tree_depth_hits = self
            .stats
            .iter()
            .filter(|s| s.tree_depth >= max_depth)
            .count();
        diag.max_rhat = rhat
            .iter()
            .copied()
            .filter(|r| !r.is_nan())
            .fold(f64::NAN, f64::max);
        diag.rhat = rhat;
        diag.ess_bulk = ess_b;
        diag.ess_tail = ess_t;
        diag.warnings.clear();
        if diag.divergent_fraction > 0.1 {
            diag.warnings.push(format!(
                "{} of {} transitions diverged ({:.1}%)",
                diag.n_divergent,
                self.n_chains * self.n_draws,
                100.0 * diag.divergent_fraction
            ));
        }
        if diag.max_rhat > 1.05 {
            let worst = diag
                .rhat
                .iter()
                .enumerate()
                .filter(|(_, r)| !r.is_nan())
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(j, _)| j);
            diag.warnings.push(format!(
                "R-hat {:.3} exceeds 1.05 (parameter `{}`)",
                diag.max_rhat,
                worst.map(|j| self.labels[j].as_str()).unwrap_or("?")
            ));
        }
        diag.converged = diag.warnings.is_empty();
    }
}

type ChainOutput = (Vec<Vec<f64>>, Vec<IterStats>, f64);

fn run_chain<D: LogDensity + ?Sized>(
    target: &D,
    config: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);
    let delta = config.target_accept.unwrap_or(0.8);
    let mut q = initialize(target, config.init_radius, &mut rng)?;
    let mut nuts = Nuts::new(target, config.max_tree_depth);
    nuts.init_step_size(&q, &mut rng);
    let mut da = DualAveraging::new(delta, nuts.step_size);
    let windows = adaptation_windows(config.n_warmup);
    let mut var_est = VarianceEstimator::new(target.dim());
    for it in 0..config.n_warmup {
        let (next, stats) = nuts.transition(&q, &mut rng);
        q = next;
        nuts.step_size = da.update(stats.accept_stat);
        if let Some(&(_, end)) = windows.iter().find(|(s, e)| it >= *s && it < *e) {
            var_est.add(&q);
            if it + 1 == end {
                nuts.inv_metric = var_est.regularized_variance();
                var_est = VarianceEstimator::new(target.dim());
                nuts.init_step_size(&q, &mut rng);
                da.restart(nuts.step_size);
            }
        }
    }
    if config.n_warmup > 0 {
        nuts.step_size = da.final_step_size();
    }
    let mut draws = Vec::with_capacity(config.n_draws);
    let mut stats = Vec::with_capacity(config.n_draws);
    for _ in 0..config.n_draws {
        let (next, st) = nuts.transition(&q, &mut rng);
        q = next;
        draws.push(target.constrained(&q));
        stats.push(st);
    }
    Ok((draws, stats, nuts.step_size))
}

/// Runs `config.n_chains` NUTS chains (in parallel) and collects diagnostics.
pub fn sample<D: LogDensity + ?Sized>(
    target: &D,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let chains: Vec<ChainOutput> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect::<Result<_>>()?;
    let mut draws = PosteriorDraws::from_chains(target.labels(), chains);
    draws.compute_diagnostics(config.max_tree_depth);
    for w in &draws.diagnostics.warnings {
        log::warn!("sampler did not converge: {w}");
    }
    Ok(draws)
}

/// Posterior draws together with the design and specification that produced them.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub draws: PosteriorDraws,
    pub design: DesignMatrices,
    pub spec: ModelSpec,
    pub dataset: TrialDataset,
    pub mspline: Option<MSplineBasis>,
    coef_cols: Range<usize>,
    aux_cols: Range<usize>,
}

impl FittedModel {
    /// Design coefficients of posterior draw `row`.
    pub fn coefficients(&self, row: usize) -> &[f64] {
        &self.draws.draw(row)[self.coef_cols.clone()]
    }

    /// Constrained auxiliary parameters (sigma, shape, or amplitude then spline weights).
    pub fn aux(&self, row: usize) -> &[f64] {
        &self.draws.draw(row)[self.aux_cols.clone()]
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn converged(&self) -> bool {
        self.draws.converged()
    }

    /// Wraps externally supplied parameter values as a single-chain fit.
    ///
    /// Each row holds the design coefficients followed by the constrained
    /// auxiliary parameters, in the order of [`FittedModel::aux`].
    pub fn from_parameter_draws(
        dataset: &TrialDataset,
        spec: &ModelSpec,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("at least one parameter draw is required"));
        }
        let design = build_design(dataset, spec)?;
        let model = ShrinkageModel::new(dataset, &design, spec)?;
        let n_coef = design.n_columns();
        let mut labels: Vec<String> = design.columns().iter().map(|c| c.label.clone()).collect();
        labels.extend(model.likelihood().aux_constrained_labels());
        for row in &rows {
            if row.len() != labels.len() {
                return Err(Error::Dimension {
                    context: "parameter draw",
                    expected: labels.len(),
                    got: row.len(),
                });
            }
            check_finite(row, "parameter draw")?;
        }
        let stats = vec![IterStats::default(); rows.len()];
        let mut draws = PosteriorDraws::from_chains(labels.clone(), vec![(rows, stats, f64::NAN)]);
        draws.compute_diagnostics(usize::MAX);
        Ok(Self {
            coef_cols: 0..n_coef,
            aux_cols: n_coef..labels.len(),
            mspline: model.mspline_basis().cloned(),
            draws,
            design,
            spec: spec.clone(),
            dataset: dataset.clone(),
        })
    }
}

/// Builds the design, samples the posterior and returns the fit.
///
/// When `config.target_accept` is unset, horseshoe models use 0.95 and others 0.8.
pub fn fit_shrinkage(
    dataset: &TrialDataset,
    spec: &ModelSpec,
    config: &SamplerConfig,
) -> Result<FittedModel> {
    let design = build_design(dataset, spec)?;
    let model = ShrinkageModel::new(dataset, &design, spec)?;
    let mut cfg = *config;
    if cfg.target_accept.is_none() {
        cfg.target_accept = Some(if spec.prior.predictive.is_horseshoe() {
            0.95
        } else {
            0.8
        });
    }
    let draws = sample(&model, &cfg)?;
    Ok(FittedModel {
        coef_cols: 0..design.n_columns(),
        aux_cols: model.aux_constrained_range(),
        mspline: model.mspline_basis().cloned(),
        draws,
        design,
        spec: spec.clone(),
        dataset: dataset.clone(),
    })
}
