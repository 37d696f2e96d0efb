//! Frequentist comparators: maximum likelihood with treatment as the only
//! covariate (optionally adjusted), fitted separately to each subgroup or to
//! the whole trial, with Wald intervals.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::design::{Covariate, Endpoint, Family, SubgroupId, TrialDataset};
use crate::error::{Error, Result};
use crate::math::{logistic, softplus, std_normal_quantile};
use crate::standardize::{EffectScale, ForestRequest, ForestRow};

const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const GRAD_TOL: f64 = 1e-10;
/// Coefficients beyond this magnitude signal separation or an empty cell.
const DIVERGENCE_BOUND: f64 = 20.0;
const NB_SHAPE_BOUNDS: (f64, f64) = (1e-4, 1e6);

/// Maximum-likelihood treatment effect with a Wald interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequentistEstimate {
    pub subgroup: String,
    pub n_subjects: usize,
    pub scale: EffectScale,
    /// MLE on the modeling scale (log scale for ratio measures).
    pub estimate: f64,
    pub se: f64,
    /// Point and interval on the reporting scale.
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub converged: bool,
    /// Norm of the log-likelihood gradient at the returned coefficients.
    pub gradient_norm: f64,
    pub estimator_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl FrequentistEstimate {
    pub fn to_row(&self) -> ForestRow {
        ForestRow {
            subgroup: self.subgroup.clone(),
            n: self.n_subjects,
            scale: self.scale,
            point: self.point,
            lower: self.lower,
            upper: self.upper,
            estimator_label: self.estimator_label.clone(),
        }
    }

    /// Does the interval cover `truth` (given on the reporting scale)?
    pub fn covers(&self, truth: f64) -> bool {
        self.lower <= truth && truth <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrequentistOptions {
    /// Covariates (numeric or categorical) added as prognostic terms.
    pub adjust_for: Vec<String>,
    pub level: f64,
    pub estimator_label: String,
}

impl Default for FrequentistOptions {
    fn default() -> Self {
        Self {
            adjust_for: Vec::new(),
            level: 0.95,
            estimator_label: "standard".into(),
        }
    }
}

/// Result of a damped Newton maximization.
#[derive(Debug, Clone)]
struct NewtonFit {
    x: Vec<f64>,
    /// Inverse of the negative Hessian at `x`.
    cov: Option<DMatrix<f64>>,
    grad_norm: f64,
    converged: bool,
}

/// Log-likelihood with gradient and Hessian.
type Objective<'a> = dyn Fn(&[f64]) -> (f64, DVector<f64>, DMatrix<f64>) + 'a;

fn newton(f: &Objective, x0: Vec<f64>) -> NewtonFit {
    let mut x = x0;
    let (mut ll, mut g, mut h) = f(&x);
    let mut converged = false;
    for _ in 0..MAX_ITER {
        if g.norm() < GRAD_TOL {
            converged = true;
            break;
        }
        let neg_h = -h.clone();
        let step = match neg_h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => match neg_h.lu().solve(&g) {
                Some(s) => s,
                None => break,
            },
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let (ll_c, g_c, h_c) = f(&cand);
            if ll_c.is_finite() && ll_c >= ll - 1e-12 * ll.abs().max(1.0) {
                let moved = x
                    .iter()
                    .zip(&cand)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                x = cand;
                ll = ll_c;
                g = g_c;
                h = h_c;
                accepted = true;
                if moved < 1e-14 && g.norm() < 1e-8 {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted || converged {
            break;
        }
    }
    if !converged && g.norm() < GRAD_TOL {
        converged = true;
    }
    let cov = (-h).cholesky().map(|c| c.inverse());
    NewtonFit {
        x,
        cov,
        grad_norm: g.norm(),
        converged,
    }
}

/// Subject-level inputs for one fit: treatment, extra covariate columns.
struct Subset {
    z: Vec<f64>,
    /// Adjustment columns, each of length n.
    adj: Vec<Vec<f64>>,
}

impl Subset {
    fn n(&self) -> usize {
        self.z.len()
    }

    /// Row i of the design [treatment, adj...] (no intercept).
    fn row(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.z[i]).chain(self.adj.iter().map(move |c| c[i]))
    }
}

fn adjustment_columns(
    dataset: &TrialDataset,
    members: &[usize],
    names: &[String],
) -> Result<Vec<Vec<f64>>> {
    let mut cols = Vec::new();
    for name in names {
        let values: Vec<Vec<f64>> = if let Some(j) = dataset.variable_index(name) {
            dummies(
                &dataset.subgroup_vars()[j].codes,
                dataset.subgroup_vars()[j].n_levels(),
                members,
            )
        } else {
            match dataset.covariates().iter().find(|c| c.name() == name) {
                Some(Covariate::Numeric { values, .. }) => {
                    vec![members.iter().map(|&i| values[i]).collect()]
                }
                Some(Covariate::Categorical(v)) => dummies(&v.codes, v.n_levels(), members),
                None => {
                    return Err(Error::config(format!(
                        "unknown adjustment covariate `{name}`"
                    )))
                }
            }
        };
        // Columns constant within the subset carry no information beyond the intercept.
        cols.extend(values.into_iter().filter(|c| c.iter().any(|v| *v != c[0])));
    }
    Ok(cols)
}

fn dummies(codes: &[usize], n_levels: usize, members: &[usize]) -> Vec<Vec<f64>> {
    (1..n_levels)
        .map(|l| {
            members
                .iter()
                .map(|&i| if codes[i] == l { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

fn wald(scale: EffectScale, estimate: f64, se: f64, level: f64) -> (f64, f64, f64) {
    let q = std_normal_quantile(0.5 + level / 2.0);
    let (lo, hi) = (estimate - q * se, estimate + q * se);
    if scale.is_ratio() {
        (estimate.exp(), lo.exp(), hi.exp())
    } else {
        (estimate, lo, hi)
    }
}

/// Everything in an estimate except its labels.
struct Outcome {
    estimate: f64,
    se: f64,
    point: f64,
    lower: f64,
    upper: f64,
    converged: bool,
    gradient_norm: f64,
    note: Option<String>,
}

impl Outcome {
    fn converged(
        scale: EffectScale,
        estimate: f64,
        se: f64,
        gradient_norm: f64,
        level: f64,
    ) -> Self {
        let (point, lower, upper) = wald(scale, estimate, se, level);
        Self {
            estimate,
            se,
            point,
            lower,
            upper,
            converged: true,
            gradient_norm,
            note: None,
        }
    }

    /// The MLE does not exist (separation, empty cell): infinite interval.
    fn flagged(scale: EffectScale, estimate: f64, gradient_norm: f64, note: &str) -> Self {
        let point = if scale.is_ratio() {
            estimate.exp()
        } else {
            estimate
        };
        let (lower, upper) = if scale.is_ratio() {
            (0.0, f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        };
        Self {
            estimate,
            se: f64::INFINITY,
            point,
            lower,
            upper,
            converged: false,
            gradient_norm,
            note: Some(note.to_string()),
        }
    }
}

/// Fits the unadjusted model to the given subjects.
pub fn fit_unadjusted(
    dataset: &TrialDataset,
    members: &[usize],
    family: Family,
) -> Result<FrequentistEstimate> {
    fit_frequentist(
        dataset,
        members,
        family,
        SubgroupId::Population,
        &FrequentistOptions::default(),
    )
}

/// Fits one frequentist model to `members`; `id` only labels the result.
pub fn fit_frequentist(
    dataset: &TrialDataset,
    members: &[usize],
    family: Family,
    id: SubgroupId,
    options: &FrequentistOptions,
) -> Result<FrequentistEstimate> {
    if !(options.level > 0.0 && options.level < 1.0) {
        return Err(Error::config(format!(
            "interval level must lie in (0, 1), got {}",
            options.level
        )));
    }
    let label = dataset.subgroup_label(id);
    let treat = dataset.treatment();
    let n1 = members.iter().filter(|&&i| treat[i]).count();
    if n1 == 0 || n1 == members.len() {
        return Err(Error::invalid(format!(
            "subset `{label}` does not contain both arms"
        )));
    }
    let subset = Subset {
        z: members
            .iter()
            .map(|&i| if treat[i] { 1.0 } else { 0.0 })
            .collect(),
        adj: adjustment_columns(dataset, members, &options.adjust_for)?,
    };
    let scale = EffectScale::for_family(family);
    let out = match (family, dataset.endpoint()) {
        (Family::Gaussian, Endpoint::Continuous(y)) => {
            let y: Vec<f64> = members.iter().map(|&i| y[i]).collect();
            let (est, se, gn) = gaussian(&subset, &y)?;
            Outcome::converged(scale, est, se, gn, options.level)
        }
        (Family::BernoulliLogit, Endpoint::Binary(y)) => {
            let y: Vec<f64> = members
                .iter()
                .map(|&i| if y[i] { 1.0 } else { 0.0 })
                .collect();
            let empty_cell = [0.0, 1.0].iter().any(|&arm| {
                let ys: Vec<f64> = (0..subset.n())
                    .filter(|&i| subset.z[i] == arm)
                    .map(|i| y[i])
                    .collect();
                ys.iter().all(|&v| v == 0.0) || ys.iter().all(|&v| v == 1.0)
            });
            let fit = logistic_fit(&subset, &y);
            summarize(scale, fit, empty_cell, options.level)
        }
        (Family::NegativeBinomial, Endpoint::Count { counts, exposure }) => {
            let y: Vec<u64> = members.iter().map(|&i| counts[i]).collect();
            let offset: Vec<f64> = members
                .iter()
                .map(|&i| exposure.as_ref().map_or(0.0, |e| e[i].ln()))
                .collect();
            let empty_arm = [0.0, 1.0].iter().any(|&arm| {
                (0..subset.n())
                    .filter(|&i| subset.z[i] == arm)
                    .all(|i| y[i] == 0)
            });
            let fit = negbin_fit(&subset, &y, &offset);
            summarize(scale, fit, empty_arm, options.level)
        }
        (Family::CoxMspline, Endpoint::TimeToEvent { time, event }) => {
            let t: Vec<f64> = members.iter().map(|&i| time[i]).collect();
            let d: Vec<bool> = members.iter().map(|&i| event[i]).collect();
            if !d.iter().any(|&e| e) {
                return Err(Error::invalid(format!("subset `{label}` has no events")));
            }
            let no_events_arm = [0.0, 1.0].iter().any(|&arm| {
                (0..subset.n())
                    .filter(|&i| subset.z[i] == arm)
                    .all(|i| !d[i])
            });
            let fit = cox_fit(&subset, &t, &d);
            summarize(scale, fit, no_events_arm, options.level)
        }
        (f, e) => {
            return Err(Error::config(format!(
                "family {f:?} does not match a {} endpoint",
                e.kind()
            )));
        }
    };
    Ok(FrequentistEstimate {
        subgroup: label,
        n_subjects: members.len(),
        scale,
        estimate: out.estimate,
        se: out.se,
        point: out.point,
        lower: out.lower,
        upper: out.upper,
        converged: out.converged,
        gradient_norm: out.gradient_norm,
        estimator_label: options.estimator_label.clone(),
        note: out.note,
    })
}

struct ModelFit {
    fit: NewtonFit,
    /// Position of the treatment coefficient.
    treatment_index: usize,
}

fn summarize(scale: EffectScale, m: ModelFit, degenerate: bool, level: f64) -> Outcome {
    let k = m.treatment_index;
    let est = m.fit.x[k];
    let se = m.fit.cov.as_ref().map_or(f64::NAN, |c| c[(k, k)].sqrt());
    if degenerate {
        return Outcome::flagged(
            scale,
            est,
            m.fit.grad_norm,
            "MLE does not exist: an arm has no outcome variation",
        );
    }
    if !m.fit.converged || !se.is_finite() || m.fit.x.iter().any(|v| v.abs() > DIVERGENCE_BOUND) {
        log::warn!(
            "frequentist fit did not converge (gradient norm {:.3e})",
            m.fit.grad_norm
        );
        return Outcome::flagged(
            scale,
            est,
            m.fit.grad_norm,
            "Newton iterations did not converge",
        );
    }
    Outcome::converged(scale, est, se, m.fit.grad_norm, level)
}

fn gaussian(s: &Subset, y: &[f64]) -> Result<(f64, f64, f64)> {
    let n = s.n();
    let p = 2 + s.adj.len();
    if n <= p {
        return Err(Error::invalid("too few subjects for a gaussian fit"));
    }
    if s.adj.is_empty() {
        let (mut sum, mut cnt) = ([0.0; 2], [0.0; 2]);
        for i in 0..n {
            let a = s.z[i] as usize;
            sum[a] += y[i];
            cnt[a] += 1.0;
        }
        let mean = [sum[0] / cnt[0], sum[1] / cnt[1]];
        let rss: f64 = (0..n).map(|i| (y[i] - mean[s.z[i] as usize]).powi(2)).sum();
        let s2 = rss / (n as f64 - 2.0);
        return Ok((
            mean[1] - mean[0],
            (s2 * (1.0 / cnt[0] + 1.0 / cnt[1])).sqrt(),
            0.0,
        ));
    }
    let x = DMatrix::from_fn(n, p, |i, j| match j {
        0 => 1.0,
        _ => s.row(i).nth(j - 1).unwrap(),
    });
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * &x;
    let ch = xtx
        .cholesky()
        .ok_or_else(|| Error::Numerical("collinear adjustment covariates".into()))?;
    let beta = ch.solve(&(x.transpose() * &yv));
    let resid = &yv - &x * &beta;
    let s2 = resid.norm_squared() / (n - p) as f64;
    let cov = ch.inverse() * s2;
    let score = x.transpose() * &resid / s2;
    Ok((beta[1], cov[(1, 1)].sqrt(), score.norm()))
}

fn logistic_fit(s: &Subset, y: &[f64]) -> ModelFit {
    let p = 1 + s.adj.len() + 1;
    let f = |b: &[f64]| {
        let mut ll = 0.0;
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        for i in 0..s.n() {
            let xi: Vec<f64> = std::iter::once(1.0).chain(s.row(i)).collect();
            let eta: f64 = xi.iter().zip(b).map(|(a, c)| a * c).sum();
            ll += y[i] * eta - softplus(eta);
            let pr = logistic(eta);
            let w = pr * (1.0 - pr);
            for a in 0..p {
                g[a] += (y[i] - pr) * xi[a];
                for c in 0..p {
                    h[(a, c)] -= w * xi[a] * xi[c];
                }
            }
        }
        (ll, g, h)
    };
    ModelFit {
        fit: newton(&f, vec![0.0; p]),
        treatment_index: 1,
    }
}

/// Σ_i [lgamma(y_i + φ) − lgamma(φ)] and its φ-derivative.
fn nb_gamma_terms(y: &[u64], phi: f64) -> (f64, f64) {
    y.iter().fold((0.0, 0.0), |(a, b), &yi| {
        if yi == 0 {
            (a, b)
        } else if yi <= 64 {
            let (l, d) = (0..yi).fold((0.0, 0.0), |(l, d), j| {
                let x = phi + j as f64;
                (l + x.ln(), d + 1.0 / x)
            });
            (a + l, b + d)
        } else {
            let yf = yi as f64;
            (
                a + ln_gamma(yf + phi) - ln_gamma(phi),
                b + digamma(yf + phi) - digamma(phi),
            )
        }
    })
}

/// NB log-likelihood (up to the y! term) and its derivative in log φ, for fixed means.
fn nb_shape_objective(y: &[u64], eta: &[f64], log_phi: f64) -> (f64, f64) {
    let phi = log_phi.exp();
    let (mut ll, mut d) = nb_gamma_terms(y, phi);
    for (i, &yi) in y.iter().enumerate() {
        let yf = yi as f64;
        let mu = eta[i].exp();
        let r = mu / phi;
        ll += -phi * r.ln_1p() + yf * (eta[i] - (phi + mu).ln());
        d += 1.0 - r.ln_1p() - (phi + yf) / (phi + mu);
    }
    (ll, d * phi)
}

fn negbin_fit(s: &Subset, y: &[u64], offset: &[f64]) -> ModelFit {
    let p = 1 + s.adj.len() + 1;
    let design: Vec<Vec<f64>> = (0..s.n())
        .map(|i| std::iter::once(1.0).chain(s.row(i)).collect())
        .collect();
    let eta_of = |b: &[f64]| -> Vec<f64> {
        design
            .iter()
            .zip(offset)
            .map(|(x, o)| o + x.iter().zip(b).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    };
    let (lo, hi) = (NB_SHAPE_BOUNDS.0.ln(), NB_SHAPE_BOUNDS.1.ln());
    let mut log_phi = 0.0f64;
    let mut beta = vec![0.0; p];
    let mean_y = y.iter().sum::<u64>() as f64 / y.len() as f64;
    let mean_exp = offset.iter().map(|o| o.exp()).sum::<f64>() / offset.len() as f64;
    if mean_y > 0.0 {
        beta[0] = (mean_y / mean_exp).ln();
    }
    let mut fit = None;
    for _ in 0..MAX_ITER {
        let phi = log_phi.exp();
        let f = |b: &[f64]| {
            let eta = eta_of(b);
            let mut ll = 0.0;
            let mut g = DVector::zeros(p);
            let mut h = DMatrix::zeros(p, p);
            for (i, x) in design.iter().enumerate() {
                let yf = y[i] as f64;
                let mu = eta[i].exp();
                ll += -phi * (mu / phi).ln_1p() + yf * (eta[i] - (phi + mu).ln());
                let score = phi * (yf - mu) / (phi + mu);
                let w = phi * mu * (yf + phi) / ((phi + mu) * (phi + mu));
                for a in 0..p {
                    g[a] += score * x[a];
                    for c in 0..p {
                        h[(a, c)] -= w * x[a] * x[c];
                    }
                }
            }
            (ll, g, h)
        };
        let nf = newton(&f, beta.clone());
        beta = nf.x.clone();
        let eta = eta_of(&beta);
        log_phi = nb_shape_root(y, &eta, log_phi, lo, hi);
        let (_, d_shape) = nb_shape_objective(y, &eta, log_phi);
        let at_bound = log_phi <= lo + 1e-12 || log_phi >= hi - 1e-12;
        let shape_ok = at_bound || d_shape.abs() < GRAD_TOL;
        let beta_grad = f(&beta).1.norm();
        let done = nf.converged && shape_ok && beta_grad < GRAD_TOL.max(1e-8);
        let total_norm = if at_bound {
            beta_grad
        } else {
            beta_grad.hypot(d_shape)
        };
        fit = Some(NewtonFit {
            grad_norm: total_norm,
            converged: done,
            ..nf
        });
        if done || !beta.iter().all(|b| b.is_finite()) {
            break;
        }
    }
    ModelFit {
        fit: fit.expect("at least one iteration"),
        treatment_index: 1,
    }
}

/// Maximizes the NB log-likelihood over log φ ∈ [lo, hi] for fixed means.
fn nb_shape_root(y: &[u64], eta: &[f64], start: f64, lo: f64, hi: f64) -> f64 {
    let d = |t: f64| nb_shape_objective(y, eta, t).1;
    if d(hi) > 0.0 {
        return hi;
    }
    if d(lo) < 0.0 {
        return lo;
    }
    // Safeguarded Newton on the score with a numerical second derivative.
    let (mut a, mut b) = (lo, hi);
    let mut t = start.clamp(lo, hi);
    for _ in 0..200 {
        let g = d(t);
        if g.abs() < GRAD_TOL {
            break;
        }
        if g > 0.0 {
            a = t;
        } else {
            b = t;
        }
        let h = 1e-6 * (1.0 + t.abs());
        let curv = (d(t + h) - d(t - h)) / (2.0 * h);
        let newton = t - g / curv;
        t = if curv < 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if b - a < 1e-15 * (1.0 + t.abs()) {
            break;
        }
    }
    t
}

fn cox_fit(s: &Subset, time: &[f64], event: &[bool]) -> ModelFit {
    let p = 1 + s.adj.len();
    let n = s.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
    let rows: Vec<Vec<f64>> = (0..n).map(|i| s.row(i).collect()).collect();
    let f = |b: &[f64]| {
        let mut ll = 0.0;
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);
        let mut k = 0;
        while k < n {
            let t = time[order[k]];
            let mut end = k;
            while end < n && time[order[end]] == t {
                let i = order[end];
                let x = &rows[i];
                let eta: f64 = x.iter().zip(b).map(|(a, c)| a * c).sum();
                let r = eta.exp();
                s0 += r;
                for a in 0..p {
                    s1[a] += r * x[a];
                    for c in 0..p {
                        s2[(a, c)] += r * x[a] * x[c];
                    }
                }
                end += 1;
            }
            let mut d = 0.0;
            for &i in &order[k..end] {
                if event[i] {
                    d += 1.0;
                    let x = &rows[i];
                    ll += x.iter().zip(b).map(|(a, c)| a * c).sum::<f64>();
                    for a in 0..p {
                        g[a] += x[a];
                    }
                }
            }
            if d > 0.0 {
                ll -= d * s0.ln();
                let m1 = &s1 / s0;
                g -= &m1 * d;
                h -= (&s2 / s0 - &m1 * m1.transpose()) * d;
            }
            k = end;
        }
        (ll, g, h)
    };
    ModelFit {
        fit: newton(&f, vec![0.0; p]),
        treatment_index: 0,
    }
}

/// Fits every requested subgroup (and the population) separately.
///
/// Row-level failures are returned in place so that other rows survive.
pub fn forest_table_frequentist(
    dataset: &TrialDataset,
    family: Family,
    request: &ForestRequest,
    options: &FrequentistOptions,
) -> Result<Vec<Result<FrequentistEstimate>>> {
    let ids = request.resolve(dataset)?;
    Ok(ids
        .par_iter()
        .map(|&id| {
            let members = dataset.members(id)?;
            fit_frequentist(dataset, &members, family, id, options)
        })
        .collect())
}
