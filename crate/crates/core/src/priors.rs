//! Prior families for shrunken and auxiliary parameters.
//!
//! Scale parameters live on the log scale; the returned log densities include
//! the log-Jacobian of that transform. Gradients are taken with respect to the
//! unconstrained parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::Family;
use crate::error::{check_finite, Error, Result};
use crate::math::{
    d_log_half_student_t_pdf, log_half_cauchy_pdf, log_half_normal_pdf, log_half_student_t_pdf,
    log_inv_gamma_pdf, log_normal_pdf, quantile_sorted,
};

/// Prior on shrunken predictive (treatment-by-subgroup) coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "prior", rename_all = "snake_case")]
pub enum PredictivePrior {
    /// beta_k ~ N(0, tau^2), tau ~ HN(phi).
    NormalHn { phi: f64 },
    /// Regularized horseshoe with global scale tau0 and Student-t slab (scale, df).
    #[serde(rename = "rhs")]
    RegularizedHorseshoe {
        tau0: f64,
        slab_scale: f64,
        slab_df: f64,
    },
}

impl PredictivePrior {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        match *self {
            PredictivePrior::NormalHn { phi } if !ok(phi) => {
                Err(Error::config("phi must be positive"))
            }
            PredictivePrior::RegularizedHorseshoe {
                tau0,
                slab_scale,
                slab_df,
            } if !(ok(tau0) && ok(slab_scale) && ok(slab_df)) => Err(Error::config(
                "tau0, slab_scale and slab_df must be positive",
            )),
            _ => Ok(()),
        }
    }

    pub fn is_horseshoe(&self) -> bool {
        matches!(self, PredictivePrior::RegularizedHorseshoe { .. })
    }
}

/// Prior on subgroup main effects. `Flat` keeps them unshrunken (dummy encoded).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "prior", rename_all = "snake_case")]
pub enum PrognosticPrior {
    Flat,
    NormalHn { phi: f64 },
}

/// Prior on unshrunken coefficients (intercept, treatment, unshrunken terms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "prior", rename_all = "snake_case")]
pub enum FixedPrior {
    Flat,
    /// Independent N(0, sd^2); mainly useful for prior-predictive checks.
    Normal {
        sd: f64,
    },
}

/// Settings for auxiliary-parameter priors. `None` scales are derived from data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxPriorConfig {
    /// Half-Student-t(3) scale for the residual sd; default max(2.5, 2.5 * mad(y)).
    pub sigma_scale: Option<f64>,
    /// Treat the residual sd as known.
    pub fixed_sigma: Option<f64>,
    /// Half-Student-t(3) scale on 1/sqrt(shape) of the negative binomial.
    pub nb_scale: f64,
    /// Half-Student-t(3) scale on the baseline-hazard amplitude.
    pub amplitude_scale: f64,
    /// Symmetric Dirichlet concentration for M-spline weights.
    pub dirichlet_concentration: f64,
}

impl Default for AuxPriorConfig {
    fn default() -> Self {
        Self {
            sigma_scale: None,
            fixed_sigma: None,
            nb_scale: 2.5,
            amplitude_scale: 5.0,
            dirichlet_concentration: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub predictive: PredictivePrior,
    pub prognostic: PrognosticPrior,
    pub fixed: FixedPrior,
    pub aux: AuxPriorConfig,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            predictive: PredictivePrior::NormalHn { phi: 1.0 },
            prognostic: PrognosticPrior::Flat,
            fixed: FixedPrior::Flat,
            aux: AuxPriorConfig::default(),
        }
    }
}

impl PriorConfig {
    pub fn with_predictive(predictive: PredictivePrior) -> Self {
        Self {
            predictive,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.predictive.validate()?;
        if let PrognosticPrior::NormalHn { phi } = self.prognostic {
            PredictivePrior::NormalHn { phi }.validate()?;
        }
        if let FixedPrior::Normal { sd } = self.fixed {
            if !(sd > 0.0) {
                return Err(Error::config("fixed-effect prior sd must be positive"));
            }
        }
        let a = &self.aux;
        let positive = [
            Some(a.nb_scale),
            Some(a.amplitude_scale),
            Some(a.dirichlet_concentration),
            a.sigma_scale,
            a.fixed_sigma,
        ];
        if positive
            .iter()
            .flatten()
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::config("auxiliary prior settings must be positive"));
        }
        Ok(())
    }
}

/// Centered normal/half-normal prior: sum_k log N(beta_k | 0, tau^2) + log HN(tau | phi) + log tau.
///
/// Gradient layout: `[d/d beta_1.., d/d log tau]`.
pub fn log_prior_normal_hn(betas: &[f64], tau: f64, phi: f64) -> Result<(f64, Vec<f64>)> {
    check_finite(betas, "normal prior coefficients")?;
    check_finite(&[tau, phi], "normal prior scales")?;
    if !(tau > 0.0 && phi > 0.0) {
        return Err(Error::config("tau and phi must be positive"));
    }
    let mut value = log_half_normal_pdf(tau, phi) + tau.ln();
    let mut grad = Vec::with_capacity(betas.len() + 1);
    let mut d_log_tau = 1.0 - (tau / phi).powi(2);
    for &b in betas {
        value += log_normal_pdf(b, 0.0, tau);
        grad.push(-b / (tau * tau));
        d_log_tau += -1.0 + (b / tau).powi(2);
    }
    grad.push(d_log_tau);
    Ok((value, grad))
}

/// Centered regularized horseshoe prior with its hyperpriors and log-scale Jacobians.
///
/// Gradient layout: `[d/d beta_1..K, d/d log tau, d/d log lambda_1..K, d/d log c2]`.
pub fn log_prior_reg_horseshoe(
    betas: &[f64],
    tau: f64,
    lambdas: &[f64],
    c2: f64,
    tau0: f64,
    slab_scale: f64,
    slab_df: f64,
) -> Result<(f64, Vec<f64>)> {
    check_finite(betas, "horseshoe coefficients")?;
    check_finite(lambdas, "horseshoe local scales")?;
    check_finite(&[tau, c2, tau0, slab_scale, slab_df], "horseshoe scales")?;
    if betas.len() != lambdas.len() {
        return Err(Error::Dimension {
            context: "horseshoe local scales",
            expected: betas.len(),
            got: lambdas.len(),
        });
    }
    if !(tau > 0.0 && c2 > 0.0 && tau0 > 0.0 && slab_scale > 0.0 && slab_df > 0.0)
        || lambdas.iter().any(|&l| l <= 0.0)
    {
        return Err(Error::config("horseshoe scale parameters must be positive"));
    }
    let k = betas.len();
    let mut grad = vec![0.0; 2 * k + 2];
    let (shape, scale) = (0.5 * slab_df, 0.5 * slab_df * slab_scale * slab_scale);
    let mut value =
        log_half_cauchy_pdf(tau, tau0) + tau.ln() + log_inv_gamma_pdf(c2, shape, scale) + c2.ln();
    let r = (tau / tau0).powi(2);
    let mut d_log_tau = 1.0 - 2.0 * r / (1.0 + r);
    let mut d_log_c2 = -shape + scale / c2;
    for i in 0..k {
        let lam = lambdas[i];
        let l2 = lam * lam;
        let denom = c2 + tau * tau * l2;
        let q = tau * tau * l2 / denom;
        let sd = tau * (c2 * l2 / denom).sqrt();
        let b = betas[i];
        value += log_normal_pdf(b, 0.0, sd) + log_half_cauchy_pdf(lam, 1.0) + lam.ln();
        grad[i] = -b / (sd * sd);
        // d log N / d log sd, chained through d log sd / d (log tau, log lambda, log c2).
        let d_log_sd = -1.0 + (b / sd).powi(2);
        d_log_tau += d_log_sd * (1.0 - q);
        grad[k + 1 + i] = d_log_sd * (1.0 - q) + 1.0 - 2.0 * l2 / (1.0 + l2);
        d_log_c2 += d_log_sd * 0.5 * q;
    }
    grad[k] = d_log_tau;
    grad[2 * k + 1] = d_log_c2;
    Ok((value, grad))
}

/// Piironen-Vehtari global-scale heuristic p0 / (K - p0) * sigma / sqrt(n).
///
/// Exposed as a reference calculation only; its assumptions (all coefficients
/// shrunken, standardized uncorrelated covariates) do not hold for subgroup models.
pub fn piironen_tau0(
    expected_nonzero: f64,
    n_coefficients: usize,
    sigma: f64,
    n: usize,
) -> Result<f64> {
    let k = n_coefficients as f64;
    if !(expected_nonzero > 0.0 && expected_nonzero < k) || n == 0 {
        return Err(Error::config(
            "expected number of non-zero coefficients must lie in (0, K)",
        ));
    }
    Ok(expected_nonzero / (k - expected_nonzero) * sigma / (n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorFunctional {
    /// |beta_i|
    AbsCoef,
    /// |beta_i - beta_j| for i != j
    AbsPairwiseDiff,
}

/// Monte Carlo quantiles of |beta_i| or |beta_i - beta_j| implied by a shrinkage prior.
pub fn marginal_prior_quantiles(
    prior: &PredictivePrior,
    functional: PriorFunctional,
    probs: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    prior.validate()?;
    if n_draws == 0 {
        return Err(Error::config("n_draws must be positive"));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::config("probabilities must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_cauchy = Cauchy::<f64>::new(0.0, 1.0).expect("valid cauchy");
    let mut draws = Vec::with_capacity(n_draws);
    match *prior {
        PredictivePrior::NormalHn { phi } => {
            for _ in 0..n_draws {
                let z: f64 = rng.sample(StandardNormal);
                let tau = phi * z.abs();
                let b1 = tau * rng.sample::<f64, _>(StandardNormal);
                draws.push(match functional {
                    PriorFunctional::AbsCoef => b1.abs(),
                    PriorFunctional::AbsPairwiseDiff => {
                        (b1 - tau * rng.sample::<f64, _>(StandardNormal)).abs()
                    }
                });
            }
        }
        PredictivePrior::RegularizedHorseshoe {
            tau0,
            slab_scale,
            slab_df,
        } => {
            // c2 ~ Inv-Gamma(nu/2, nu s^2/2), i.e. 1 / Gamma(shape nu/2, rate nu s^2/2).
            let gamma = Gamma::new(
                0.5 * slab_df,
                1.0 / (0.5 * slab_df * slab_scale * slab_scale),
            )
            .map_err(|e| Error::config(e.to_string()))?;
            for _ in 0..n_draws {
                let tau = tau0 * half_cauchy.sample(&mut rng).abs();
                let c2 = 1.0 / gamma.sample(&mut rng);
                let coef = |rng: &mut ChaCha8Rng| {
                    let lam: f64 = half_cauchy.sample(rng).abs();
                    let l2 = lam * lam;
                    let lt2 = c2 * l2 / (c2 + tau * tau * l2);
                    tau * lt2.sqrt() * rng.sample::<f64, _>(StandardNormal)
                };
                let b1 = coef(&mut rng);
                draws.push(match functional {
                    PriorFunctional::AbsCoef => b1.abs(),
                    PriorFunctional::AbsPairwiseDiff => (b1 - coef(&mut rng)).abs(),
                });
            }
        }
    }
    draws.sort_unstable_by(f64::total_cmp);
    Ok(probs.iter().map(|&p| quantile_sorted(&draws, p)).collect())
}

/// Resolved auxiliary prior scales for a fitted dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuxScales {
    pub sigma: f64,
    pub nb: f64,
    pub amplitude: f64,
    pub dirichlet: f64,
}

const AUX_T_DF: f64 = 3.0;

/// Log prior of the auxiliary parameters on their unconstrained scale.
///
/// Layouts: gaussian `[log sigma]` (empty when sigma is known), bernoulli `[]`,
/// negative binomial `[log shape]`, cox `[log amplitude, logit_1..logit_{M-1}]`
/// where the spline weights are softmax(logits, 0).
pub fn log_prior_aux(family: Family, aux: &[f64], scales: &AuxScales) -> Result<(f64, Vec<f64>)> {
    check_finite(aux, "auxiliary parameters")?;
    let mut grad = vec![0.0; aux.len()];
    let value = match family {
        Family::BernoulliLogit => 0.0,
        Family::Gaussian => {
            if aux.is_empty() {
                0.0
            } else {
                let (v, d) = log_half_t_on_log_scale(aux[0], scales.sigma);
                grad[0] = d;
                v
            }
        }
        Family::NegativeBinomial => {
            // psi = 1 / sqrt(shape) = exp(-u / 2) ~ half-t(3, 0, scale)
            let u = aux[0];
            let psi = (-0.5 * u).exp();
            grad[0] = d_log_half_student_t_pdf(psi, AUX_T_DF, scales.nb) * (-0.5 * psi) - 0.5;
            log_half_student_t_pdf(psi, AUX_T_DF, scales.nb) + psi.ln() - std::f64::consts::LN_2
        }
        Family::CoxMspline => {
            let (v_amp, d_amp) = log_half_t_on_log_scale(aux[0], scales.amplitude);
            grad[0] = d_amp;
            let (v_w, d_w) = log_dirichlet_softmax(&aux[1..], scales.dirichlet);
            grad[1..].copy_from_slice(&d_w);
            v_amp + v_w
        }
    };
    Ok((value, grad))
}

/// half-t(3, 0, scale) on x = exp(u), including the Jacobian du.
fn log_half_t_on_log_scale(u: f64, scale: f64) -> (f64, f64) {
    let x = u.exp();
    (
        log_half_student_t_pdf(x, AUX_T_DF, scale) + u,
        d_log_half_student_t_pdf(x, AUX_T_DF, scale) * x + 1.0,
    )
}

/// Softmax with the last logit pinned at zero.
pub fn softmax_with_reference(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(0.0f64, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|&y| (y - m).exp()).collect();
    w.push((-m).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Symmetric Dirichlet(alpha) on softmax(logits, 0), with the transform's log-Jacobian
/// (which equals sum_m log w_m for this parameterization).
fn log_dirichlet_softmax(logits: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    let w = softmax_with_reference(logits);
    let m = w.len() as f64;
    let value = alpha * w.iter().map(|v| v.ln()).sum::<f64>();
    let grad = w[..logits.len()]
        .iter()
        .map(|&wj| alpha * (1.0 - m * wj))
        .collect();
    (value, grad)
}

/// Dirichlet log density on the simplex (no transform).
pub fn log_dirichlet_density(weights: &[f64], alpha: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let m = weights.len() as f64;
    ln_gamma(alpha * m) - m * ln_gamma(alpha)
        + (alpha - 1.0) * weights.iter().map(|w| w.ln()).sum::<f64>()
}

/// Log density of a flat prior: zero everywhere.
pub fn log_prior_flat(_values: &[f64]) -> f64 {
    0.0
}

/// A block of shrunken coefficients in non-centered form: beta = scale(hyper) * raw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ShrinkageBlock {
    NormalHn {
        phi: f64,
    },
    Horseshoe {
        tau0: f64,
        slab_scale: f64,
        slab_df: f64,
    },
}

impl ShrinkageBlock {
    pub fn from_predictive(p: &PredictivePrior) -> Self {
        match *p {
            PredictivePrior::NormalHn { phi } => ShrinkageBlock::NormalHn { phi },
            PredictivePrior::RegularizedHorseshoe {
                tau0,
                slab_scale,
                slab_df,
            } => ShrinkageBlock::Horseshoe {
                tau0,
                slab_scale,
                slab_df,
            },
        }
    }

    /// Number of unconstrained hyperparameters for `k` coefficients.
    pub fn hyper_dim(&self, k: usize) -> usize {
        match self {
            ShrinkageBlock::NormalHn { .. } => 1,
            ShrinkageBlock::Horseshoe { .. } => k + 2,
        }
    }

    pub fn hyper_labels(&self, prefix: &str, coef_labels: &[String]) -> Vec<String> {
        match self {
            ShrinkageBlock::NormalHn { .. } => vec![format!("{prefix}tau")],
            ShrinkageBlock::Horseshoe { .. } => {
                let mut v = vec![format!("{prefix}tau")];
                v.extend(coef_labels.iter().map(|l| format!("{prefix}lambda[{l}]")));
                v.push(format!("{prefix}c2"));
                v
            }
        }
    }

    /// Per-coefficient scales s_k and the sensitivities needed for backpropagation.
    fn scales(&self, hyper: &[f64], k: usize, scales: &mut [f64], q: &mut [f64]) {
        match *self {
            ShrinkageBlock::NormalHn { .. } => {
                let tau = hyper[0].exp();
                scales[..k].iter_mut().for_each(|s| *s = tau);
                q[..k].iter_mut().for_each(|v| *v = 0.0);
            }
            ShrinkageBlock::Horseshoe { .. } => {
                let tau = hyper[0].exp();
                let c2 = hyper[k + 1].exp();
                for i in 0..k {
                    let l2 = (2.0 * hyper[1 + i]).exp();
                    let denom = c2 + tau * tau * l2;
                    q[i] = tau * tau * l2 / denom;
                    scales[i] = tau * (c2 * l2 / denom).sqrt();
                }
            }
        }
    }

    /// Writes beta = s * raw.
    pub fn transform(&self, raw: &[f64], hyper: &[f64], betas: &mut [f64]) {
        let k = raw.len();
        let mut s = vec![0.0; k];
        let mut q = vec![0.0; k];
        self.scales(hyper, k, &mut s, &mut q);
        for i in 0..k {
            betas[i] = s[i] * raw[i];
        }
    }

    /// Adds the non-centered log prior (raw ~ N(0,1), hyperpriors, Jacobians) and
    /// backpropagates `grad_beta` (d loglik / d beta) into raw and hyper gradients.
    pub fn log_prior_and_backprop(
        &self,
        raw: &[f64],
        hyper: &[f64],
        grad_beta: &[f64],
        grad_raw: &mut [f64],
        grad_hyper: &mut [f64],
    ) -> f64 {
        let k = raw.len();
        let mut s = vec![0.0; k];
        let mut q = vec![0.0; k];
        self.scales(hyper, k, &mut s, &mut q);
        let mut value = 0.0;
        for i in 0..k {
            value += -0.5 * raw[i] * raw[i];
            grad_raw[i] += -raw[i] + s[i] * grad_beta[i];
        }
        match *self {
            ShrinkageBlock::NormalHn { phi } => {
                let tau = hyper[0].exp();
                value += log_half_normal_pdf(tau, phi) + hyper[0];
                let mut d = 1.0 - (tau / phi).powi(2);
                for i in 0..k {
                    d += grad_beta[i] * s[i] * raw[i];
                }
                grad_hyper[0] += d;
            }
            ShrinkageBlock::Horseshoe {
                tau0,
                slab_scale,
                slab_df,
            } => {
                let tau = hyper[0].exp();
                let c2 = hyper[k + 1].exp();
                let (shape, scale) = (0.5 * slab_df, 0.5 * slab_df * slab_scale * slab_scale);
                let r = (tau / tau0).powi(2);
                value += log_half_cauchy_pdf(tau, tau0) + hyper[0];
                value += log_inv_gamma_pdf(c2, shape, scale) + hyper[k + 1];
                let mut d_tau = 1.0 - 2.0 * r / (1.0 + r);
                let mut d_c2 = -shape + scale / c2;
                for i in 0..k {
                    let lam = hyper[1 + i].exp();
                    let l2 = lam * lam;
                    value += log_half_cauchy_pdf(lam, 1.0) + hyper[1 + i];
                    let gb = grad_beta[i] * s[i] * raw[i];
                    d_tau += gb * (1.0 - q[i]);
                    grad_hyper[1 + i] += gb * (1.0 - q[i]) + 1.0 - 2.0 * l2 / (1.0 + l2);
                    d_c2 += gb * 0.5 * q[i];
                }
                grad_hyper[0] += d_tau;
                grad_hyper[k + 1] += d_c2;
            }
        }
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::LN_2PI;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_grad_close(analytic: &[f64], numeric: &[f64], tol: f64) {
        for (a, n) in analytic.iter().zip(numeric) {
            let scale = a.abs().max(n.abs()).max(1e-2);
            assert!((a - n).abs() / scale < tol, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn normal_hn_zero_coefficients_hand_value() {
        // K log N(0|0,1) + log HN(1|1) + log(1) = -K/2 log(2 pi) + log sqrt(2/pi) - 1/2
        let k = 4;
        let (v, _) = log_prior_normal_hn(&vec![0.0; k], 1.0, 1.0).unwrap();
        let expected = -(k as f64) * 0.5 * LN_2PI + 0.5 * (2.0 / std::f64::consts::PI).ln() - 0.5;
        assert_relative_eq!(v, expected, max_relative = 1e-14);
    }

    #[test]
    fn normal_hn_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = rng.random_range(1..6);
            let mut x: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            x.push(rng.random_range(-2.0..1.0));
            let phi = rng.random_range(0.2..2.0);
            let f = |x: &[f64]| log_prior_normal_hn(&x[..k], x[k].exp(), phi).unwrap().0;
            let (_, g) = log_prior_normal_hn(&x[..k], x[k].exp(), phi).unwrap();
            assert_grad_close(&g, &central_diff(&f, &x, 1e-5), 1e-6);
        }
    }

    #[test]
    fn normal_hn_ratio_invariant_under_joint_scaling() {
        // For fixed tau the conditional density of beta depends only on beta / tau.
        let betas = [0.3, -0.7, 1.1];
        let (a, _) = log_prior_normal_hn(&betas, 0.8, 1.0).unwrap();
        let c = 3.0;
        let scaled: Vec<f64> = betas.iter().map(|b| b * c).collect();
        let (b, _) = log_prior_normal_hn(&scaled, 0.8 * c, 1.0 * c).unwrap();
        // Each N term shifts by -log c, the half-normal by -log c, the Jacobian by +log c.
        assert_relative_eq!(b, a - 3.0 * c.ln(), max_relative = 1e-12);
    }

    #[test]
    fn horseshoe_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let k = rng.random_range(1..5);
            let mut x: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            x.push(rng.random_range(-2.0..1.0));
            x.extend((0..k).map(|_| rng.random_range(-1.5..1.5)));
            x.push(rng.random_range(-1.0..2.0));
            let f = |x: &[f64]| {
                let lam: Vec<f64> = x[k + 1..2 * k + 1].iter().map(|v| v.exp()).collect();
                log_prior_reg_horseshoe(
                    &x[..k],
                    x[k].exp(),
                    &lam,
                    x[2 * k + 1].exp(),
                    0.5,
                    2.0,
                    4.0,
                )
                .unwrap()
                .0
            };
            let lam: Vec<f64> = x[k + 1..2 * k + 1].iter().map(|v| v.exp()).collect();
            let (_, g) = log_prior_reg_horseshoe(
                &x[..k],
                x[k].exp(),
                &lam,
                x[2 * k + 1].exp(),
                0.5,
                2.0,
                4.0,
            )
            .unwrap();
            assert_grad_close(&g, &central_diff(&f, &x, 1e-5), 1e-6);
        }
    }

    #[test]
    fn horseshoe_large_slab_approaches_plain_horseshoe() {
        let betas = [0.2, -1.3, 0.05];
        let lambdas = [0.7, 2.0, 0.1];
        let (tau, tau0, s, nu) = (0.4, 1.0, 2.0, 4.0);
        let c2 = 1e8;
        let (v, _) = log_prior_reg_horseshoe(&betas, tau, &lambdas, c2, tau0, s, nu).unwrap();
        let slab_term = log_inv_gamma_pdf(c2, nu / 2.0, nu * s * s / 2.0) + c2.ln();
        // Plain horseshoe written out independently.
        let mut plain = log_half_cauchy_pdf(tau, tau0) + tau.ln();
        for (b, l) in betas.iter().zip(&lambdas) {
            let sd = tau * l;
            plain += -0.5 * LN_2PI - sd.ln() - 0.5 * (b / sd).powi(2);
            plain += (2.0 / std::f64::consts::PI).ln() - (l * l).ln_1p() + l.ln();
        }
        assert!((v - slab_term - plain).abs() < 1e-6);
    }

    #[test]
    fn horseshoe_finite_for_extreme_unconstrained_values() {
        for lt in [-30.0f64, 0.0, 30.0] {
            let (v, g) =
                log_prior_reg_horseshoe(&[0.5], lt.exp(), &[1.0], 1.0, 1.0, 2.0, 4.0).unwrap();
            assert!(v.is_finite() && g.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn non_finite_inputs_rejected() {
        assert!(log_prior_normal_hn(&[f64::NAN], 1.0, 1.0).is_err());
        assert!(
            log_prior_reg_horseshoe(&[1.0], f64::INFINITY, &[1.0], 1.0, 1.0, 2.0, 4.0).is_err()
        );
    }

    #[test]
    fn flat_prior_contributes_zero() {
        assert_eq!(log_prior_flat(&[1e6, -3.0, 0.0]), 0.0);
    }

    #[test]
    fn uniform_dirichlet_constant_on_simplex() {
        let a = log_dirichlet_density(&[0.2, 0.3, 0.5], 1.0);
        let b = log_dirichlet_density(&[0.9, 0.05, 0.05], 1.0);
        assert_relative_eq!(a, b, max_relative = 1e-14);
        // log Gamma(3) = log 2
        assert_relative_eq!(a, 2f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn sigma_prior_density_at_zero() {
        let a = 2.5;
        let t3_zero = 2.0 / (std::f64::consts::PI * 3f64.sqrt());
        assert_relative_eq!(
            log_half_student_t_pdf(0.0, 3.0, a),
            (2.0 * t3_zero / a).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn aux_gradients_match_finite_differences() {
        let scales = AuxScales {
            sigma: 2.5,
            nb: 2.5,
            amplitude: 5.0,
            dirichlet: 1.3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            for (family, dim) in [
                (Family::Gaussian, 1),
                (Family::NegativeBinomial, 1),
                (Family::CoxMspline, 6),
            ] {
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                let f = |x: &[f64]| log_prior_aux(family, x, &scales).unwrap().0;
                let (_, g) = log_prior_aux(family, &x, &scales).unwrap();
                assert_grad_close(&g, &central_diff(&f, &x, 1e-5), 1e-6);
            }
        }
    }

    #[test]
    fn shrinkage_blocks_match_centered_densities() {
        // Non-centered log density of raw equals the centered density of beta minus
        // log|d beta / d raw| = sum_k log s_k (up to the shared constant).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 4;
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let zero = vec![0.0; k];
        let mut gr = vec![0.0; k];

        let block = ShrinkageBlock::NormalHn { phi: 0.7 };
        let hyper = [0.3f64];
        let mut gh = vec![0.0; 1];
        let nc = block.log_prior_and_backprop(&raw, &hyper, &zero, &mut gr, &mut gh);
        let mut betas = vec![0.0; k];
        block.transform(&raw, &hyper, &mut betas);
        let (c, _) = log_prior_normal_hn(&betas, hyper[0].exp(), 0.7).unwrap();
        let log_det = k as f64 * hyper[0];
        assert_relative_eq!(
            nc - 0.5 * k as f64 * LN_2PI,
            c + log_det,
            max_relative = 1e-10
        );

        let block = ShrinkageBlock::Horseshoe {
            tau0: 0.3,
            slab_scale: 2.0,
            slab_df: 4.0,
        };
        let hyper: Vec<f64> = (0..k + 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut gh = vec![0.0; k + 2];
        let nc = block.log_prior_and_backprop(&raw, &hyper, &zero, &mut gr, &mut gh);
        block.transform(&raw, &hyper, &mut betas);
        let lam: Vec<f64> = hyper[1..=k].iter().map(|v| v.exp()).collect();
        let (c, _) = log_prior_reg_horseshoe(
            &betas,
            hyper[0].exp(),
            &lam,
            hyper[k + 1].exp(),
            0.3,
            2.0,
            4.0,
        )
        .unwrap();
        let log_det: f64 = betas
            .iter()
            .zip(&raw)
            .map(|(b, r)| (b / r).abs().ln())
            .sum();
        assert_relative_eq!(
            nc - 0.5 * k as f64 * LN_2PI,
            c + log_det,
            max_relative = 1e-10
        );
    }

    #[test]
    fn normal_hn_quantiles_scale_linearly_in_phi() {
        let probs = [0.05, 0.5, 0.95];
        let q1 = marginal_prior_quantiles(
            &PredictivePrior::NormalHn { phi: 1.0 },
            PriorFunctional::AbsCoef,
            &probs,
            20_000,
            9,
        )
        .unwrap();
        let q2 = marginal_prior_quantiles(
            &PredictivePrior::NormalHn { phi: 2.5 },
            PriorFunctional::AbsCoef,
            &probs,
            20_000,
            9,
        )
        .unwrap();
        for (a, b) in q1.iter().zip(&q2) {
            assert_relative_eq!(2.5 * a, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn quantile_probs_validated() {
        let r = marginal_prior_quantiles(
            &PredictivePrior::NormalHn { phi: 1.0 },
            PriorFunctional::AbsCoef,
            &[1.5],
            10,
            1,
        );
        assert!(r.is_err());
    }

    #[test]
    fn piironen_heuristic() {
        // 6 of 15 non-zero, sigma 1.2, n = 500
        let t = piironen_tau0(6.0, 15, 1.2, 500).unwrap();
        assert_relative_eq!(t, 6.0 / 9.0 * 1.2 / 500f64.sqrt(), max_relative = 1e-14);
    }
}
