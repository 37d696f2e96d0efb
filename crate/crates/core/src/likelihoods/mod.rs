//! Log-likelihoods and gradients for the four endpoint families.
//!
//! Subjects sharing a design row (same entries, treatment and offset) are collapsed
//! into patterns before evaluation, and the gaussian family uses sufficient
//! statistics, so each evaluation costs far less than one pass over the subjects.

mod mspline;

pub use mspline::{build_mspline_basis, MSplineBasis};

use std::collections::HashMap;

use statrs::function::gamma::{digamma, ln_gamma};

use crate::design::{DesignMatrices, Endpoint, Family, TrialDataset};
use crate::error::{check_finite, Error, Result};
use crate::math::{logistic, softplus, LN_2PI};
use crate::priors::softmax_with_reference;

/// Default spline degree for the baseline hazard.
pub const MSPLINE_DEGREE: usize = 3;

/// Options controlling likelihood construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodOptions {
    /// Known residual sd for the gaussian family (removes sigma from the parameters).
    pub fixed_sigma: Option<f64>,
    pub spline_degree: usize,
}

impl Default for LikelihoodOptions {
    fn default() -> Self {
        Self {
            fixed_sigma: None,
            spline_degree: MSPLINE_DEGREE,
        }
    }
}

/// Unique design rows with their effective (treatment-scaled) entries.
#[derive(Debug, Clone)]
pub(crate) struct Patterns {
    entries: Vec<Vec<(usize, f64)>>,
    offset: Vec<f64>,
    /// Pattern index of each subject.
    pub row_pattern: Vec<usize>,
}

impl Patterns {
    /// Groups subjects by design row. With `z = None` each subject's own treatment is used.
    pub fn build(design: &DesignMatrices, z: Option<f64>) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut entries = Vec::new();
        let mut offset = Vec::new();
        let mut row_pattern = Vec::with_capacity(design.n_rows());
        let cols = design.columns();
        for i in 0..design.n_rows() {
            let zi = z.unwrap_or(design.treatment()[i]);
            let row: Vec<(usize, f64)> = design
                .row_entries(i)
                .map(|(c, v)| {
                    (
                        c,
                        if cols[c].interacts_with_treatment {
                            v * zi
                        } else {
                            v
                        },
                    )
                })
                .filter(|&(_, v)| v != 0.0)
                .collect();
            let off = design.offset()[i];
            let mut key = Vec::with_capacity(2 * row.len() + 1);
            key.push(off.to_bits());
            for &(c, v) in &row {
                key.push(c as u64);
                key.push(v.to_bits());
            }
            let next = entries.len();
            let p = *index.entry(key).or_insert_with(|| {
                entries.push(row);
                offset.push(off);
                next
            });
            row_pattern.push(p);
        }
        Self {
            entries,
            offset,
            row_pattern,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn lp(&self, g: usize, coefs: &[f64]) -> f64 {
        self.offset[g]
            + self.entries[g]
                .iter()
                .map(|&(c, v)| coefs[c] * v)
                .sum::<f64>()
    }

    fn add_grad(&self, g: usize, scale: f64, grad: &mut [f64]) {
        for &(c, v) in &self.entries[g] {
            grad[c] += scale * v;
        }
    }

    /// Per-pattern sums of a per-subject quantity.
    fn sum_by_pattern(&self, values: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (&g, v) in self.row_pattern.iter().zip(values) {
            out[g] += v;
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    Gaussian {
        xtx: Vec<f64>,
        xty: Vec<f64>,
        yty: f64,
        n: f64,
        fixed_sigma: Option<f64>,
    },
    Bernoulli {
        patterns: Patterns,
        n_g: Vec<f64>,
        sy: Vec<f64>,
    },
    NegBinomial {
        patterns: Patterns,
        n_g: Vec<f64>,
        sy: Vec<f64>,
        /// (count value, multiplicity) over all subjects.
        y_hist: Vec<(u64, f64)>,
        /// -sum log(y_i!)
        constant: f64,
    },
    Cox {
        patterns: Patterns,
        basis: MSplineBasis,
        d_g: Vec<f64>,
        /// Per-pattern sums of I-spline values at each subject's follow-up time (G x M).
        si: Vec<f64>,
        /// M-spline values at each event time (E x M).
        event_m: Vec<f64>,
        n_events: f64,
    },
}

/// A prepared likelihood for one dataset and design.
///
/// Parameters are the design coefficients followed by the auxiliary parameters on
/// the unconstrained scale: gaussian `[log sigma]` (absent when sigma is fixed),
/// bernoulli none, negative binomial `[log shape]`, cox
/// `[log amplitude, logit_1..logit_{M-1}]` with spline weights softmax(logits, 0).
#[derive(Debug, Clone)]
pub struct Likelihood {
    family: Family,
    n_coef: usize,
    kernel: Kernel,
}

impl Likelihood {
    pub fn new(
        family: Family,
        design: &DesignMatrices,
        endpoint: &Endpoint,
        options: LikelihoodOptions,
    ) -> Result<Self> {
        let n = design.n_rows();
        let n_coef = design.n_columns();
        let kernel = match (family, endpoint) {
            (Family::Gaussian, Endpoint::Continuous(y)) => {
                check_finite(y, "outcome")?;
                if let Some(s) = options.fixed_sigma {
                    if !(s > 0.0 && s.is_finite()) {
                        return Err(Error::config("fixed sigma must be positive"));
                    }
                }
                let mut xtx = vec![0.0; n_coef * n_coef];
                let mut xty = vec![0.0; n_coef];
                let cols = design.columns();
                for (i, &yi) in y.iter().enumerate() {
                    let z = design.treatment()[i];
                    let row: Vec<(usize, f64)> = design
                        .row_entries(i)
                        .map(|(c, v)| {
                            (
                                c,
                                if cols[c].interacts_with_treatment {
                                    v * z
                                } else {
                                    v
                                },
                            )
                        })
                        .collect();
                    let r = yi - design.offset()[i];
                    for &(a, va) in &row {
                        xty[a] += va * r;
                        for &(b, vb) in &row {
                            xtx[a * n_coef + b] += va * vb;
                        }
                    }
                }
                let yty = y
                    .iter()
                    .enumerate()
                    .map(|(i, yi)| (yi - design.offset()[i]).powi(2))
                    .sum();
                Kernel::Gaussian {
                    xtx,
                    xty,
                    yty,
                    n: n as f64,
                    fixed_sigma: options.fixed_sigma,
                }
            }
            (Family::BernoulliLogit, Endpoint::Binary(y)) => {
                let patterns = Patterns::build(design, None);
                let n_g = patterns.sum_by_pattern(std::iter::repeat_n(1.0, n));
                let sy = patterns.sum_by_pattern(y.iter().map(|&b| f64::from(u8::from(b))));
                Kernel::Bernoulli { patterns, n_g, sy }
            }
            (Family::NegativeBinomial, Endpoint::Count { counts, .. }) => {
                let patterns = Patterns::build(design, None);
                let n_g = patterns.sum_by_pattern(std::iter::repeat_n(1.0, n));
                let sy = patterns.sum_by_pattern(counts.iter().map(|&c| c as f64));
                let mut hist: HashMap<u64, f64> = HashMap::new();
                for &c in counts {
                    *hist.entry(c).or_default() += 1.0;
                }
                let mut y_hist: Vec<(u64, f64)> = hist.into_iter().collect();
                y_hist.sort_unstable_by_key(|&(y, _)| y);
                let constant = -y_hist
                    .iter()
                    .map(|&(y, m)| m * ln_gamma(y as f64 + 1.0))
                    .sum::<f64>();
                Kernel::NegBinomial {
                    patterns,
                    n_g,
                    sy,
                    y_hist,
                    constant,
                }
            }
            (Family::CoxMspline, Endpoint::TimeToEvent { time, event }) => {
                check_finite(time, "follow-up times")?;
                if time.iter().any(|&t| t <= 0.0) {
                    return Err(Error::invalid("follow-up times must be positive"));
                }
                let event_times: Vec<f64> = time
                    .iter()
                    .zip(event)
                    .filter(|(_, &e)| e)
                    .map(|(&t, _)| t)
                    .collect();
                let basis = build_mspline_basis(&event_times, options.spline_degree)?;
                let m = basis.n_basis();
                let patterns = Patterns::build(design, None);
                let g = patterns.len();
                let mut d_g = vec![0.0; g];
                let mut si = vec![0.0; g * m];
                let mut event_m = Vec::with_capacity(event_times.len() * m);
                for i in 0..n {
                    let p = patterns.row_pattern[i];
                    for (acc, v) in si[p * m..(p + 1) * m]
                        .iter_mut()
                        .zip(basis.integrated_eval(time[i]))
                    {
                        *acc += v;
                    }
                    if event[i] {
                        d_g[p] += 1.0;
                        event_m.extend(basis.basis_eval(time[i]));
                    }
                }
                Kernel::Cox {
                    patterns,
                    basis,
                    d_g,
                    si,
                    event_m,
                    n_events: event_times.len() as f64,
                }
            }
            _ => {
                return Err(Error::config(format!(
                    "family {family:?} does not match the {} endpoint",
                    endpoint.kind()
                )))
            }
        };
        Ok(Self {
            family,
            n_coef,
            kernel,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_coefficients(&self) -> usize {
        self.n_coef
    }

    pub fn aux_dim(&self) -> usize {
        match &self.kernel {
            Kernel::Gaussian { fixed_sigma, .. } => usize::from(fixed_sigma.is_none()),
            Kernel::Bernoulli { .. } => 0,
            Kernel::NegBinomial { .. } => 1,
            Kernel::Cox { basis, .. } => basis.n_basis(),
        }
    }

    /// Labels of the auxiliary parameters on their constrained scale.
    pub fn aux_labels(&self) -> Vec<String> {
        match &self.kernel {
            Kernel::Gaussian { fixed_sigma, .. } => {
                if fixed_sigma.is_none() {
                    vec!["sigma".into()]
                } else {
                    vec![]
                }
            }
            Kernel::Bernoulli { .. } => vec![],
            Kernel::NegBinomial { .. } => vec!["shape".into()],
            Kernel::Cox { basis, .. } => std::iter::once("baseline_amplitude".to_string())
                .chain((1..basis.n_basis()).map(|m| format!("spline_logit[{m}]")))
                .collect(),
        }
    }

    /// Auxiliary parameters mapped to a reporting scale: sigma, shape, or amplitude followed
    /// by the full set of M spline weights.
    pub fn aux_constrained(&self, aux: &[f64]) -> Vec<f64> {
        match &self.kernel {
            Kernel::Cox { .. } => {
                let mut out = vec![aux[0].exp()];
                out.extend(softmax_with_reference(&aux[1..]));
                out
            }
            _ => aux.iter().map(|v| v.exp()).collect(),
        }
    }

    pub fn aux_constrained_labels(&self) -> Vec<String> {
        match &self.kernel {
            Kernel::Cox { basis, .. } => std::iter::once("baseline_amplitude".to_string())
                .chain((1..=basis.n_basis()).map(|m| format!("spline_weight[{m}]")))
                .collect(),
            _ => self.aux_labels(),
        }
    }

    pub fn mspline_basis(&self) -> Option<&MSplineBasis> {
        match &self.kernel {
            Kernel::Cox { basis, .. } => Some(basis),
            _ => None,
        }
    }

    /// Known residual sd, if the gaussian family was built with one.
    pub fn fixed_sigma(&self) -> Option<f64> {
        match &self.kernel {
            Kernel::Gaussian { fixed_sigma, .. } => *fixed_sigma,
            _ => None,
        }
    }

    /// Log-likelihood and gradient with respect to `[coefficients.., aux..]`.
    pub fn eval(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let expected = self.n_coef + self.aux_dim();
        if params.len() != expected {
            return Err(Error::Dimension {
                context: "likelihood parameters",
                expected,
                got: params.len(),
            });
        }
        check_finite(params, "likelihood parameters")?;
        let mut grad = vec![0.0; expected];
        let (gc, ga) = grad.split_at_mut(self.n_coef);
        let v = self.eval_into(&params[..self.n_coef], &params[self.n_coef..], gc, ga);
        if !v.is_finite() {
            return Err(Error::NonFinite("log-likelihood"));
        }
        Ok((v, grad))
    }

    /// Adds gradients into `grad_coef` and `grad_aux` and returns the log-likelihood.
    pub(crate) fn eval_into(
        &self,
        coefs: &[f64],
        aux: &[f64],
        grad_coef: &mut [f64],
        grad_aux: &mut [f64],
    ) -> f64 {
        match &self.kernel {
            Kernel::Gaussian {
                xtx,
                xty,
                yty,
                n,
                fixed_sigma,
            } => {
                let p = self.n_coef;
                let (sigma, log_sigma) = match fixed_sigma {
                    Some(s) => (*s, s.ln()),
                    None => (aux[0].exp(), aux[0]),
                };
                let inv_s2 = 1.0 / (sigma * sigma);
                let mut rss = *yty;
                for a in 0..p {
                    let xtx_b: f64 = (0..p).map(|b| xtx[a * p + b] * coefs[b]).sum();
                    rss += coefs[a] * (xtx_b - 2.0 * xty[a]);
                    grad_coef[a] += (xty[a] - xtx_b) * inv_s2;
                }
                let rss = rss.max(0.0);
                if fixed_sigma.is_none() {
                    grad_aux[0] += -n + rss * inv_s2;
                }
                -0.5 * n * LN_2PI - n * log_sigma - 0.5 * rss * inv_s2
            }
            Kernel::Bernoulli { patterns, n_g, sy } => {
                let mut total = 0.0;
                for g in 0..patterns.len() {
                    let lp = patterns.lp(g, coefs);
                    total += sy[g] * lp - n_g[g] * softplus(lp);
                    patterns.add_grad(g, sy[g] - n_g[g] * logistic(lp), grad_coef);
                }
                total
            }
            Kernel::NegBinomial {
                patterns,
                n_g,
                sy,
                y_hist,
                constant,
            } => {
                let phi = aux[0].exp();
                let mut total = *constant;
                let mut d_phi = 0.0;
                // sum_i [lgamma(y_i + phi) - lgamma(phi)]
                for &(y, mult) in y_hist {
                    if y == 0 {
                        continue;
                    }
                    let (lg, dg) = if y <= 64 {
                        (0..y).fold((0.0, 0.0), |(a, b), j| {
                            let x = phi + j as f64;
                            (a + x.ln(), b + 1.0 / x)
                        })
                    } else {
                        let yf = y as f64;
                        (
                            ln_gamma(yf + phi) - ln_gamma(phi),
                            digamma(yf + phi) - digamma(phi),
                        )
                    };
                    total += mult * lg;
                    d_phi += mult * dg;
                }
                for g in 0..patterns.len() {
                    let eta = patterns.lp(g, coefs);
                    let mu = eta.exp();
                    let log_phi_mu = log_add(phi.ln(), eta);
                    // n phi log(phi / (phi + mu)) + Sy (log mu - log(phi + mu))
                    let r = mu / phi;
                    total += -n_g[g] * phi * r.ln_1p() + sy[g] * (eta - log_phi_mu);
                    d_phi += n_g[g] * (1.0 - r.ln_1p()) - (n_g[g] * phi + sy[g]) / (phi + mu);
                    patterns.add_grad(
                        g,
                        sy[g] - (n_g[g] * phi + sy[g]) * mu / (phi + mu),
                        grad_coef,
                    );
                }
                grad_aux[0] += d_phi * phi;
                total
            }
            Kernel::Cox {
                patterns,
                basis,
                d_g,
                si,
                event_m,
                n_events,
            } => {
                let m = basis.n_basis();
                let log_amp = aux[0];
                let amp = log_amp.exp();
                let w = softmax_with_reference(&aux[1..]);
                let mut d_w = vec![0.0; m];
                let mut total = n_events * log_amp;
                for e in event_m.chunks_exact(m) {
                    let h: f64 = e.iter().zip(&w).map(|(a, b)| a * b).sum();
                    total += h.ln();
                    for (dw, ev) in d_w.iter_mut().zip(e) {
                        *dw += ev / h;
                    }
                }
                let mut cum_total = 0.0;
                for g in 0..patterns.len() {
                    let lp = patterns.lp(g, coefs);
                    let elp = lp.exp();
                    let sig = &si[g * m..(g + 1) * m];
                    let base: f64 = sig.iter().zip(&w).map(|(a, b)| a * b).sum();
                    let cum = amp * elp * base;
                    total += d_g[g] * lp - cum;
                    cum_total += cum;
                    patterns.add_grad(g, d_g[g] - cum, grad_coef);
                    for (dw, s) in d_w.iter_mut().zip(sig) {
                        *dw -= amp * elp * s;
                    }
                }
                grad_aux[0] += n_events - cum_total;
                let wd: f64 = w.iter().zip(&d_w).map(|(a, b)| a * b).sum();
                for j in 0..m - 1 {
                    grad_aux[1 + j] += w[j] * (d_w[j] - wd);
                }
                total
            }
        }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    crate::math::log_sum_exp(a, b)
}

/// One-shot log-likelihood and gradient for `params = [coefficients.., aux..]`.
pub fn loglik(
    family: Family,
    design: &DesignMatrices,
    data: &TrialDataset,
    params: &[f64],
) -> Result<(f64, Vec<f64>)> {
    Likelihood::new(
        family,
        design,
        data.endpoint(),
        LikelihoodOptions::default(),
    )?
    .eval(params)
}

/// Baseline cumulative hazard amp * sum_m w_m I_m(t) from constrained parameters.
pub fn baseline_cumulative_hazard(
    basis: &MSplineBasis,
    amplitude: f64,
    weights: &[f64],
    t: f64,
) -> f64 {
    amplitude
        * basis
            .integrated_eval(t)
            .iter()
            .zip(weights)
            .map(|(a, b)| a * b)
            .sum::<f64>()
}
