//! The full shrinkage model as a log density on the unconstrained scale.

use std::ops::Range;

use super::LogDensity;
use crate::design::{DesignMatrices, Endpoint, Family, ModelSpec, TrialDataset};
use crate::error::{Error, Result};
use crate::likelihoods::{Likelihood, LikelihoodOptions, MSplineBasis};
use crate::math::{log_normal_pdf, mad};
use crate::priors::{log_prior_aux, AuxScales, FixedPrior, PrognosticPrior, ShrinkageBlock};

/// Posterior density of a shrinkage model.
///
/// Unconstrained layout: the design coefficients (with shrunken blocks replaced by
/// their standard-normal raw values), then prognostic hyperparameters, predictive
/// hyperparameters and auxiliary parameters. Scales are on the log scale.
#[derive(Debug, Clone)]
pub struct ShrinkageModel {
    family: Family,
    likelihood: Likelihood,
    n_coef: usize,
    fixed: Range<usize>,
    prog: Range<usize>,
    pred: Range<usize>,
    fixed_prior: FixedPrior,
    prog_block: Option<ShrinkageBlock>,
    pred_block: Option<ShrinkageBlock>,
    prog_hyper: Range<usize>,
    pred_hyper: Range<usize>,
    aux: Range<usize>,
    aux_scales: AuxScales,
    labels: Vec<String>,
}

impl ShrinkageModel {
    pub fn new(dataset: &TrialDataset, design: &DesignMatrices, spec: &ModelSpec) -> Result<Self> {
        let prior = &spec.prior;
        prior.validate()?;
        let likelihood = Likelihood::new(
            spec.family,
            design,
            dataset.endpoint(),
            LikelihoodOptions {
                fixed_sigma: prior.aux.fixed_sigma,
                ..LikelihoodOptions::default()
            },
        )?;
        let n_coef = design.n_columns();
        let prog = design.shrunken_prognostic_block();
        let pred = design.shrunken_predictive_block();
        let fixed = 0..prog.start;
        let prog_block = match prior.prognostic {
            PrognosticPrior::NormalHn { phi } if !prog.is_empty() => {
                Some(ShrinkageBlock::NormalHn { phi })
            }
            PrognosticPrior::NormalHn { .. } | PrognosticPrior::Flat => {
                if !prog.is_empty() {
                    return Err(Error::config(
                        "shrunken prognostic columns require a normal_hn prognostic prior",
                    ));
                }
                None
            }
        };
        let pred_block =
            (!pred.is_empty()).then(|| ShrinkageBlock::from_predictive(&prior.predictive));
        let n_prog_hyper = prog_block.map_or(0, |b| b.hyper_dim(prog.len()));
        let n_pred_hyper = pred_block.map_or(0, |b| b.hyper_dim(pred.len()));
        let prog_hyper = n_coef..n_coef + n_prog_hyper;
        let pred_hyper = prog_hyper.end..prog_hyper.end + n_pred_hyper;
        let aux = pred_hyper.end..pred_hyper.end + likelihood.aux_dim();

        let sigma_scale = match (prior.aux.sigma_scale, dataset.endpoint()) {
            (Some(s), _) => s,
            (None, Endpoint::Continuous(y)) => (2.5 * mad(y)).max(2.5),
            (None, _) => 2.5,
        };
        let aux_scales = AuxScales {
            sigma: sigma_scale,
            nb: prior.aux.nb_scale,
            amplitude: prior.aux.amplitude_scale,
            dirichlet: prior.aux.dirichlet_concentration,
        };

        let col_labels: Vec<String> = design.columns().iter().map(|c| c.label.clone()).collect();
        let mut labels = col_labels.clone();
        if let Some(b) = prog_block {
            labels.extend(b.hyper_labels("prognostic_", &col_labels[prog.clone()]));
        }
        if let Some(b) = pred_block {
            labels.extend(b.hyper_labels("", &col_labels[pred.clone()]));
        }
        labels.extend(likelihood.aux_constrained_labels());

        Ok(Self {
            family: spec.family,
            likelihood,
            n_coef,
            fixed,
            prog,
            pred,
            fixed_prior: prior.fixed,
            prog_block,
            pred_block,
            prog_hyper,
            pred_hyper,
            aux,
            aux_scales,
            labels,
        })
    }

    pub fn n_coefficients(&self) -> usize {
        self.n_coef
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.likelihood
    }

    pub fn mspline_basis(&self) -> Option<&MSplineBasis> {
        self.likelihood.mspline_basis()
    }

    pub fn aux_scales(&self) -> &AuxScales {
        &self.aux_scales
    }

    /// Unconstrained positions of the auxiliary parameters.
    pub fn aux_range(&self) -> Range<usize> {
        self.aux.clone()
    }

    /// Positions of the auxiliary parameters within a constrained draw.
    pub fn aux_constrained_range(&self) -> Range<usize> {
        let start = self.aux.start;
        start..start + self.likelihood.aux_constrained_labels().len()
    }

    /// Design coefficients implied by an unconstrained point.
    pub fn coefficients(&self, x: &[f64]) -> Vec<f64> {
        let mut coefs = x[..self.n_coef].to_vec();
        if let Some(b) = self.prog_block {
            b.transform(
                &x[self.prog.clone()],
                &x[self.prog_hyper.clone()],
                &mut coefs[self.prog.clone()],
            );
        }
        if let Some(b) = self.pred_block {
            b.transform(
                &x[self.pred.clone()],
                &x[self.pred_hyper.clone()],
                &mut coefs[self.pred.clone()],
            );
        }
        coefs
    }

    fn block_term(
        block: Option<ShrinkageBlock>,
        x: &[f64],
        cols: &Range<usize>,
        hyper: &Range<usize>,
        grad_coef: &[f64],
        grad: &mut [f64],
    ) -> f64 {
        let Some(b) = block else { return 0.0 };
        let mut g_raw = vec![0.0; cols.len()];
        let mut g_hyper = vec![0.0; hyper.len()];
        let v = b.log_prior_and_backprop(
            &x[cols.clone()],
            &x[hyper.clone()],
            &grad_coef[cols.clone()],
            &mut g_raw,
            &mut g_hyper,
        );
        grad[cols.clone()].copy_from_slice(&g_raw);
        grad[hyper.clone()].copy_from_slice(&g_hyper);
        v
    }
}

impl LogDensity for ShrinkageModel {
    fn dim(&self) -> usize {
        self.aux.end
    }

    fn log_density(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        if x.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let coefs = self.coefficients(x);
        let mut grad_coef = vec![0.0; self.n_coef];
        let mut grad_aux = vec![0.0; self.aux.len()];
        let mut total =
            self.likelihood
                .eval_into(&coefs, &x[self.aux.clone()], &mut grad_coef, &mut grad_aux);

        if let FixedPrior::Normal { sd } = self.fixed_prior {
            for i in self.fixed.clone() {
                total += log_normal_pdf(coefs[i], 0.0, sd);
                grad_coef[i] -= coefs[i] / (sd * sd);
            }
        }
        grad[self.fixed.clone()].copy_from_slice(&grad_coef[self.fixed.clone()]);
        total += Self::block_term(
            self.prog_block,
            x,
            &self.prog,
            &self.prog_hyper,
            &grad_coef,
            grad,
        );
        total += Self::block_term(
            self.pred_block,
            x,
            &self.pred,
            &self.pred_hyper,
            &grad_coef,
            grad,
        );

        match log_prior_aux(self.family, &x[self.aux.clone()], &self.aux_scales) {
            Ok((v, g)) => {
                total += v;
                for ((dst, a), b) in grad[self.aux.clone()].iter_mut().zip(&grad_aux).zip(&g) {
                    *dst = a + b;
                }
            }
            Err(_) => return f64::NEG_INFINITY,
        }
        total
    }

    fn constrained(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.coefficients(x);
        out.extend(x[self.prog_hyper.clone()].iter().map(|v| v.exp()));
        out.extend(x[self.pred_hyper.clone()].iter().map(|v| v.exp()));
        out.extend(self.likelihood.aux_constrained(&x[self.aux.clone()]));
        out
    }

    fn labels(&self) -> Vec<String> {
        self.labels.clone()
    }
}

/// Log posterior and gradient at an unconstrained point.
pub fn log_posterior(model: &ShrinkageModel, params: &[f64]) -> Result<(f64, Vec<f64>)> {
    if params.len() != model.dim() {
        return Err(Error::Dimension {
            context: "posterior parameters",
            expected: model.dim(),
            got: params.len(),
        });
    }
    let mut grad = vec![0.0; params.len()];
    let v = model.log_density(params, &mut grad);
    if !v.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("log posterior"));
    }
    Ok((v, grad))
}
