//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line to stderr
//! (uncaptured, so it shows in plain `cargo test` output).
//!
//! `SUBSHRINK_ACCEPTANCE_TIER=smoke` runs the simulation criteria with 20
//! replicates and asserts only the smoke-level checks.

// NaN must fail every threshold check, hence `!(x < limit)`.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use subgroup_shrink::design::{
    build_design, CategoricalVar, Covariate, Endpoint, Family, ModelSpec, SubgroupId,
    TrialAssumptions, TrialDataset,
};
use subgroup_shrink::engine::{
    fit_shrinkage, log_posterior, FittedModel, LogDensity, SamplerConfig, ShrinkageModel,
};
use subgroup_shrink::likelihoods::{Likelihood, LikelihoodOptions};
use subgroup_shrink::priors::{
    log_prior_aux, log_prior_normal_hn, log_prior_reg_horseshoe, marginal_prior_quantiles,
    AuxPriorConfig, AuxScales, FixedPrior, PredictivePrior, PriorConfig, PriorFunctional,
};
use subgroup_shrink::simlab::{
    continuous_roster, run_campaign, tte_roster, CampaignConfig, EstimatorMetrics, EstimatorSpec,
    MetricsReport, SimScenario,
};
use subgroup_shrink::standardize::{average_hazard_ratio, effect_draws, StandardizeOptions};

fn report_line(id: u8, name: &str, pass: bool, detail: &str, started: Instant) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "[acceptance] criterion {id} {status} {name}: {detail} ({:.1}s)",
        started.elapsed().as_secs_f64()
    );
}

fn smoke() -> bool {
    std::env::var("SUBSHRINK_ACCEPTANCE_TIER").is_ok_and(|v| v == "smoke")
}

fn n_sim(full: usize) -> usize {
    if smoke() {
        20
    } else {
        full
    }
}

// ---------------------------------------------------------------- criterion 1

fn within(value: f64, reference: f64) -> bool {
    if reference < 0.01 {
        (value - reference).abs() <= 0.001
    } else {
        (value - reference).abs() <= 0.05 * reference
    }
}

#[test]
fn criterion_1_prior_calibration() {
    let started = Instant::now();
    let rhs = |tau0| PredictivePrior::RegularizedHorseshoe {
        tau0,
        slab_scale: 2.0,
        slab_df: 4.0,
    };
    let normal = PredictivePrior::NormalHn { phi: 1.0 };
    let cases: [(&str, PredictivePrior, PriorFunctional, [f64; 3]); 6] = [
        (
            "normal_hn |b|",
            normal,
            PriorFunctional::AbsCoef,
            [0.01, 0.37, 2.18],
        ),
        (
            "normal_hn |bi-bj|",
            normal,
            PriorFunctional::AbsPairwiseDiff,
            [0.02, 0.52, 3.09],
        ),
        (
            "rhs(1) |b|",
            rhs(1.0),
            PriorFunctional::AbsCoef,
            [0.008, 0.42, 3.23],
        ),
        (
            "rhs(0.3) |b|",
            rhs(0.3),
            PriorFunctional::AbsCoef,
            [0.002, 0.16, 2.30],
        ),
        (
            "rhs(0.03) |b|",
            rhs(0.03),
            PriorFunctional::AbsCoef,
            [0.0003, 0.02, 0.68],
        ),
        // Not a criterion value; checked for shape only below.
        (
            "rhs(0.03) |bi-bj|",
            rhs(0.03),
            PriorFunctional::AbsPairwiseDiff,
            [f64::NAN; 3],
        ),
    ];
    // Reference entries rounded to one significant digit, which the ±5% band cannot absorb.
    let rounding_limited = [("normal_hn |b|", 0), ("rhs(0.03) |b|", 1)];
    let mut misses = Vec::new();
    let mut unexpected = Vec::new();
    for (name, prior, functional, reference) in cases {
        let q = marginal_prior_quantiles(&prior, functional, &[0.05, 0.5, 0.95], 1_000_000, 2024)
            .unwrap();
        if reference[0].is_nan() {
            assert!(q[0] < q[1] && q[1] < q[2]);
            continue;
        }
        for k in 0..3 {
            if !within(q[k], reference[k]) {
                let msg = format!("{name} q{k}: {:.4} vs {}", q[k], reference[k]);
                if !rounding_limited.contains(&(name, k)) {
                    unexpected.push(msg.clone());
                }
                misses.push(msg);
            }
        }
    }
    let runtime_ok = started.elapsed().as_secs() < 60;
    let pass = misses.is_empty() && runtime_ok;
    let detail = if misses.is_empty() {
        "all 15 quantiles within tolerance".to_string()
    } else {
        format!("{} outside tolerance: {}", misses.len(), misses.join("; "))
    };
    report_line(1, "prior calibration", pass, &detail, started);
    // Only the entries limited by one-digit rounding may miss; everything else must hold.
    assert!(unexpected.is_empty(), "unexpected misses: {unexpected:?}");
    assert!(runtime_ok, "runtime {:?}", started.elapsed());
}

// ---------------------------------------------------------------- criterion 2

fn assumptions() -> TrialAssumptions {
    TrialAssumptions {
        delta_plan: 0.4,
        sigma_plan: Some(1.0),
    }
}

fn dataset(family: Family, n: usize, seed: u64) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let var = |name: &str, levels: usize, rng: &mut ChaCha8Rng| {
        let codes = (0..n)
            .map(|i| {
                if i < levels {
                    i
                } else {
                    rng.random_range(0..levels)
                }
            })
            .collect();
        let names = (0..levels)
            .map(|j| ((b'a' + j as u8) as char).to_string())
            .collect();
        CategoricalVar::new(name, names, codes).unwrap()
    };
    let vars = vec![var("x1", 2, &mut rng), var("x2", 3, &mut rng)];
    let age = Covariate::Numeric {
        name: "age".into(),
        values: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let endpoint = match family {
        Family::Gaussian => {
            Endpoint::Continuous((0..n).map(|_| rng.random_range(-2.0..3.0)).collect())
        }
        Family::BernoulliLogit => Endpoint::Binary((0..n).map(|_| rng.random_bool(0.4)).collect()),
        Family::NegativeBinomial => Endpoint::Count {
            counts: (0..n).map(|_| rng.random_range(0..7)).collect(),
            exposure: Some((0..n).map(|_| rng.random_range(0.5..2.0)).collect()),
        },
        Family::CoxMspline => Endpoint::TimeToEvent {
            time: (0..n).map(|_| rng.random_range(0.05..4.0)).collect(),
            event: (0..n).map(|_| rng.random_bool(0.7)).collect(),
        },
    };
    let treatment = (0..n).map(|i| i % 2 == 0).collect();
    TrialDataset::new(treatment, vars, vec![age], endpoint).unwrap()
}

const FAMILIES: [Family; 4] = [
    Family::Gaussian,
    Family::BernoulliLogit,
    Family::NegativeBinomial,
    Family::CoxMspline,
];

/// Largest relative error between an analytic gradient and central differences.
type Density<'a> = &'a dyn Fn(&[f64]) -> (f64, Vec<f64>);

fn max_fd_error(f: Density, x: &[f64]) -> f64 {
    let (_, g) = f(x);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        let mut p = x.to_vec();
        p[i] += h;
        let up = f(&p).0;
        p[i] -= 2.0 * h;
        let down = f(&p).0;
        let fd = (up - down) / (2.0 * h);
        let scale = g[i].abs().max(fd.abs()).max(1.0);
        worst = worst.max((g[i] - fd).abs() / scale);
    }
    worst
}

#[test]
fn criterion_2_gradient_suite() {
    let started = Instant::now();
    const POINTS: usize = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: String, err: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(err),
        None => worst.push((name, err)),
    };

    for _ in 0..POINTS {
        let k = rng.random_range(1..7);
        let betas: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let phi = rng.random_range(0.2..2.0);
        // Parameters on the unconstrained scale: betas, log tau.
        let mut x = betas.clone();
        x.push(rng.random_range(-1.5..1.0));
        let f = |x: &[f64]| log_prior_normal_hn(&x[..k], x[k].exp(), phi).unwrap();
        record("prior normal_hn".into(), max_fd_error(&f, &x));

        // betas, log tau, log lambdas, log c2
        let mut x = betas.clone();
        x.push(rng.random_range(-3.0..0.5));
        x.extend((0..k).map(|_| rng.random_range(-1.5..1.5)));
        x.push(rng.random_range(-0.5..2.0));
        let (tau0, s, nu) = (rng.random_range(0.03..1.0), 2.0, 4.0);
        let f = |x: &[f64]| {
            let lambdas: Vec<f64> = x[k + 1..2 * k + 1].iter().map(|v| v.exp()).collect();
            log_prior_reg_horseshoe(
                &x[..k],
                x[k].exp(),
                &lambdas,
                x[2 * k + 1].exp(),
                tau0,
                s,
                nu,
            )
            .unwrap()
        };
        record("prior rhs".into(), max_fd_error(&f, &x));
    }

    let scales = AuxScales {
        sigma: 1.3,
        nb: 1.0,
        amplitude: 5.0,
        dirichlet: 1.0,
    };
    let priors = [
        PredictivePrior::NormalHn { phi: 0.7 },
        PredictivePrior::RegularizedHorseshoe {
            tau0: 0.3,
            slab_scale: 2.0,
            slab_df: 4.0,
        },
    ];
    for family in FAMILIES {
        let aux_dim = match family {
            Family::Gaussian | Family::NegativeBinomial => 1,
            Family::BernoulliLogit => 0,
            Family::CoxMspline => 6,
        };
        for _ in 0..POINTS {
            let aux: Vec<f64> = (0..aux_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = |a: &[f64]| log_prior_aux(family, a, &scales).unwrap();
            if aux_dim > 0 {
                record(format!("prior aux {family:?}"), max_fd_error(&f, &aux));
            }
        }
        for point in 0..POINTS {
            let data = dataset(family, 60, point as u64);
            let mut spec = ModelSpec::global(family, PriorConfig::default(), assumptions());
            spec.adjust_for = vec!["age".into()];
            let design = build_design(&data, &spec).unwrap();
            let lik = Likelihood::new(
                family,
                &design,
                data.endpoint(),
                LikelihoodOptions::default(),
            )
            .unwrap();
            let x: Vec<f64> = (0..lik.n_coefficients() + lik.aux_dim())
                .map(|_| rng.random_range(-0.8..0.8))
                .collect();
            record(
                format!("likelihood {family:?}"),
                max_fd_error(&|p| lik.eval(p).unwrap(), &x),
            );

            let prior = PriorConfig {
                predictive: priors[point % 2],
                fixed: FixedPrior::Normal { sd: 3.0 },
                ..PriorConfig::default()
            };
            let spec = ModelSpec::global(family, prior, assumptions());
            let design = build_design(&data, &spec).unwrap();
            let model = ShrinkageModel::new(&data, &design, &spec).unwrap();
            let x: Vec<f64> = (0..model.dim())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            record(
                format!("posterior {family:?}"),
                max_fd_error(&|p| log_posterior(&model, p).unwrap(), &x),
            );
        }
    }
    let bad: Vec<String> = worst
        .iter()
        .filter(|(_, e)| !(*e < 1e-5))
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let runtime_ok = started.elapsed().as_secs() < 60;
    let pass = bad.is_empty() && runtime_ok;
    report_line(
        2,
        "gradient suite",
        pass,
        &format!(
            "{} checks at {POINTS} points each, max rel. error {max:.2e}",
            worst.len()
        ),
        started,
    );
    assert!(bad.is_empty(), "{bad:?}");
    assert!(runtime_ok);
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_conjugate_sampler() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let n = 80;
    let sigma = 1.2;
    let z: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let y: Vec<f64> = z
        .iter()
        .map(|&t| 0.3 + if t { 0.6 } else { 0.0 } + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let data =
        TrialDataset::new(z.clone(), vec![], vec![], Endpoint::Continuous(y.clone())).unwrap();
    // Normal priors on intercept and treatment with known sigma: conjugate normal-normal.
    let prior_sd = 2.0;
    let prior = PriorConfig {
        fixed: FixedPrior::Normal { sd: prior_sd },
        aux: AuxPriorConfig {
            fixed_sigma: Some(sigma),
            ..AuxPriorConfig::default()
        },
        ..PriorConfig::default()
    };
    let spec = ModelSpec::global(Family::Gaussian, prior, assumptions());
    let cfg = SamplerConfig {
        n_chains: 4,
        n_warmup: 1000,
        n_draws: 1000,
        seed: 5,
        ..SamplerConfig::default()
    };
    let fit = fit_shrinkage(&data, &spec, &cfg).unwrap();

    // Exact posterior: precision X'X / sigma^2 + I / prior_sd^2.
    let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
    let (mut r0, mut r1) = (0.0, 0.0);
    for (yi, &t) in y.iter().zip(&z) {
        let x1 = if t { 1.0 } else { 0.0 };
        a += 1.0;
        b += x1;
        d += x1 * x1;
        r0 += yi;
        r1 += x1 * yi;
    }
    let s2 = sigma * sigma;
    let p = [
        [a / s2 + 1.0 / prior_sd.powi(2), b / s2],
        [b / s2, d / s2 + 1.0 / prior_sd.powi(2)],
    ];
    let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
    let cov = [
        [p[1][1] / det, -p[0][1] / det],
        [-p[1][0] / det, p[0][0] / det],
    ];
    let rhs = [r0 / s2, r1 / s2];
    let mean = [
        cov[0][0] * rhs[0] + cov[0][1] * rhs[1],
        cov[1][0] * rhs[0] + cov[1][1] * rhs[1],
    ];

    let mut details = Vec::new();
    let mut pass = true;
    for j in 0..2 {
        let col = fit.draws.column(j);
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
        let ess = fit.draws.diagnostics.ess_bulk[j];
        let (mcse_m, mcse_s) = (s / ess.sqrt(), s / (2.0 * ess).sqrt());
        let sd_exact = cov[j][j].sqrt();
        let ok = (m - mean[j]).abs() < 3.0 * mcse_m && (s - sd_exact).abs() < 3.0 * mcse_s;
        pass &= ok;
        details.push(format!(
            "{}: mean {m:.4}/{:.4} sd {s:.4}/{sd_exact:.4}",
            fit.draws.labels()[j],
            mean[j]
        ));
    }
    let max_rhat = fit
        .draws
        .diagnostics
        .rhat
        .iter()
        .copied()
        .fold(0.0, f64::max);
    pass &= max_rhat < 1.01;
    let runtime_ok = started.elapsed().as_secs() < 60;
    pass &= runtime_ok;
    details.push(format!("max R-hat {max_rhat:.4}"));
    report_line(3, "sampler correctness", pass, &details.join(", "), started);
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 4

fn random_fit(data: &TrialDataset, spec: &ModelSpec, n_draws: usize, seed: u64) -> FittedModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = build_design(data, spec).unwrap();
    let n_aux = ShrinkageModel::new(data, &design, spec)
        .unwrap()
        .likelihood()
        .aux_constrained_labels()
        .len();
    let rows = (0..n_draws)
        .map(|_| {
            let mut r: Vec<f64> = (0..design.n_columns())
                .map(|_| rng.random_range(-0.8..0.8))
                .collect();
            r.extend((0..n_aux).map(|_| rng.random_range(0.5..2.0)));
            r
        })
        .collect();
    FittedModel::from_parameter_draws(data, spec, rows).unwrap()
}

fn keep() -> StandardizeOptions {
    StandardizeOptions {
        keep_draws: true,
        ..StandardizeOptions::default()
    }
}

#[test]
fn criterion_4_standardization_oracles() {
    let started = Instant::now();
    let mut details = Vec::new();
    let level = |variable, level| SubgroupId::Level { variable, level };

    // Gaussian collapsibility: the population effect is the size-weighted mean
    // of the effects in the levels of any one variable, draw by draw.
    let data = dataset(Family::Gaussian, 90, 1);
    let spec = ModelSpec::global(Family::Gaussian, PriorConfig::default(), assumptions());
    let fit = random_fit(&data, &spec, 40, 2);
    let ids = [
        SubgroupId::Population,
        level(1, 0),
        level(1, 1),
        level(1, 2),
    ];
    let d = effect_draws(&fit, &ids, &keep()).unwrap();
    let sizes: Vec<f64> = ids[1..]
        .iter()
        .map(|&id| data.members(id).unwrap().len() as f64)
        .collect();
    let total: f64 = sizes.iter().sum();
    let collapse_err = (0..40)
        .map(|r| {
            let pooled: f64 = (0..3).map(|k| sizes[k] * d[k + 1][r]).sum::<f64>() / total;
            (d[0][r] - pooled).abs()
        })
        .fold(0.0, f64::max);
    let collapse_ok = collapse_err < 1e-10;
    details.push(format!("collapsibility {collapse_err:.1e}"));

    // Bernoulli saturated 2x2: one binary subgroup variable, treatment and
    // their interaction. The marginal odds ratio in each cell follows directly
    // from the cell-level logits.
    let n = 120;
    let x = CategoricalVar::new(
        "x1",
        vec!["a".into(), "b".into()],
        (0..n).map(|i| (i / 2) % 2).collect(),
    )
    .unwrap();
    let data = TrialDataset::new(
        (0..n).map(|i| i % 2 == 0).collect(),
        vec![x],
        vec![],
        Endpoint::Binary((0..n).map(|i| i % 3 == 0).collect()),
    )
    .unwrap();
    let spec = ModelSpec::one_way(
        Family::BernoulliLogit,
        "x1",
        PriorConfig::default(),
        assumptions(),
    );
    let fit = random_fit(&data, &spec, 20, 3);
    let d = effect_draws(&fit, &[level(0, 0), level(0, 1)], &keep()).unwrap();
    let mut saturated_err: f64 = 0.0;
    for r in 0..20 {
        for (k, l) in [0usize, 1].into_iter().enumerate() {
            // Every subject of a cell shares one logit per arm, so the marginal odds ratio is
            // exp(logit(treated) - logit(control)) for that cell.
            let member = data.members(level(0, l)).unwrap()[0];
            let lp0 = fit
                .design
                .linear_predictor(fit.coefficients(r), Some(false))
                .unwrap()[member];
            let lp1 = fit
                .design
                .linear_predictor(fit.coefficients(r), Some(true))
                .unwrap()[member];
            let expected = (lp1 - lp0).exp();
            saturated_err = saturated_err.max((d[k][r] - expected).abs() / expected);
        }
    }
    let saturated_ok = saturated_err < 1e-12;
    details.push(format!("saturated 2x2 {saturated_err:.1e}"));

    // AHR of exponential curves with hazard ratio 0.5.
    let grid: Vec<f64> = (0..4001).map(|j| 10.0 * j as f64 / 4000.0).collect();
    let sc: Vec<f64> = grid.iter().map(|t| (-t).exp()).collect();
    let st: Vec<f64> = grid.iter().map(|t| (-0.5 * t).exp()).collect();
    let ahr = average_hazard_ratio(&sc, &st).unwrap();
    let recovery_ok = ((ahr - 0.5) / 0.5).abs() < 1e-3;
    details.push(format!("exponential AHR {ahr:.5}"));

    // Antisymmetry: swapping the arms inverts the AHR exactly.
    let sc2: Vec<f64> = grid.iter().map(|t| (-t * t / 4.0).exp()).collect();
    let st2: Vec<f64> = grid
        .iter()
        .map(|t| 0.6 * (-t).exp() + 0.4 * (-0.1 * t).exp())
        .collect();
    let a = average_hazard_ratio(&sc2, &st2).unwrap();
    let b = average_hazard_ratio(&st2, &sc2).unwrap();
    let antisym_ok = a.ln() == -(b.ln()) || (a * b - 1.0).abs() < 4.0 * f64::EPSILON;
    details.push(format!("antisymmetry log {:.1e}", (a.ln() + b.ln()).abs()));

    let runtime_ok = started.elapsed().as_secs() < 60;
    let pass = collapse_ok && saturated_ok && recovery_ok && antisym_ok && runtime_ok;
    report_line(
        4,
        "standardization oracles",
        pass,
        &details.join(", "),
        started,
    );
    assert!(pass, "{details:?}");
}

// ---------------------------------------------------------------- criteria 5-8

fn campaign(scenario: &SimScenario, n_sim: usize, estimators: Vec<EstimatorSpec>) -> MetricsReport {
    let cfg = CampaignConfig {
        n_sim,
        seed: 20_240_501,
        estimators,
        ..CampaignConfig::default()
    };
    run_campaign(scenario, &cfg).unwrap()
}

fn metrics<'a>(report: &'a MetricsReport, spec: &EstimatorSpec) -> &'a EstimatorMetrics {
    report
        .estimator(&spec.label())
        .unwrap_or_else(|| panic!("no estimator {}", spec.label()))
}

#[test]
fn criterion_5_frequentist_coverage() {
    let started = Instant::now();
    let scenario = SimScenario::continuous(1).unwrap();
    let report = campaign(&scenario, n_sim(400), vec![EstimatorSpec::Standard]);
    let m = metrics(&report, &EstimatorSpec::Standard);
    let coverage = m.coverage_summary.mean;
    let abs_bias = 100.0 * m.abs_bias_summary.mean;
    let mcse = 100.0
        * m.subgroups
            .iter()
            .map(|s| s.bias_mcse.unwrap_or(f64::NAN))
            .sum::<f64>()
        / m.subgroups.len() as f64;
    let coverage_ok = (0.93..=0.97).contains(&coverage);
    let bias_ok = abs_bias < 1.0 + 3.0 * mcse;
    let pass = coverage_ok && bias_ok && m.n_failed == 0;
    let detail = format!(
        "n_sim {}, mean coverage {:.1}%, mean |bias|*100 {abs_bias:.2} (limit {:.2})",
        report.n_sim,
        100.0 * coverage,
        1.0 + 3.0 * mcse
    );
    report_line(5, "frequentist coverage", pass, &detail, started);
    if !smoke() {
        assert!(pass, "{detail}");
    }
}

/// Continuous campaigns shared by criteria 6 and 8.
fn continuous_reports() -> &'static [MetricsReport] {
    static REPORTS: OnceLock<Vec<MetricsReport>> = OnceLock::new();
    REPORTS.get_or_init(|| {
        (1..=3)
            .map(|id| {
                campaign(
                    &SimScenario::continuous(id).unwrap(),
                    n_sim(100),
                    Vec::new(),
                )
            })
            .collect()
    })
}

fn continuous_roster_of(scenario: &SimScenario) -> Vec<EstimatorSpec> {
    let a = scenario.assumptions();
    continuous_roster(a.delta_plan, a.sigma_plan.unwrap())
}

#[test]
fn criterion_6_shrinkage_dominance_continuous() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for (id, report) in (1u8..=3).zip(continuous_reports()) {
        let scenario = SimScenario::continuous(id).unwrap();
        let roster = continuous_roster_of(&scenario);
        for spec in roster.iter().filter(|e| **e != EstimatorSpec::Standard) {
            let m = metrics(report, spec);
            let r = m.standardized_rmse.unwrap_or(f64::NAN);
            if !(r < 1.0) {
                failures.push(format!("S{id} {} {r:.3}", spec.label()));
            }
        }
        let best = roster
            .iter()
            .filter(|e| e.is_bayesian())
            .map(|e| metrics(report, e).standardized_rmse.unwrap_or(f64::NAN))
            .fold(f64::INFINITY, f64::min);
        notes.push(format!("S{id} best shrinkage ratio {best:.3}"));
        if id <= 2 && !smoke() {
            // Global rhs with tau0 = delta_plan against one-way normal with phi = sigma_plan.
            let a = scenario.assumptions();
            let global = EstimatorSpec::Global {
                prior: PredictivePrior::RegularizedHorseshoe {
                    tau0: a.delta_plan,
                    slab_scale: 2.0 * a.sigma_plan.unwrap(),
                    slab_df: 4.0,
                },
            };
            let one_way = EstimatorSpec::OneWay {
                prior: PredictivePrior::NormalHn {
                    phi: a.sigma_plan.unwrap(),
                },
                adjust_all: false,
            };
            let g = metrics(report, &global).standardized_rmse.unwrap();
            let o = metrics(report, &one_way).standardized_rmse.unwrap();
            notes.push(format!("S{id} global/one-way {:.3}", g / o));
            if !(g / o < 1.02) {
                failures.push(format!("S{id} global {g:.3} vs one-way {o:.3}"));
            }
        }
    }
    let pass = failures.is_empty();
    let detail = format!(
        "n_sim {}; {}{}",
        continuous_reports()[0].n_sim,
        notes.join(", "),
        if pass {
            String::new()
        } else {
            format!("; failed: {}", failures.join("; "))
        }
    );
    report_line(
        6,
        "shrinkage dominance (continuous)",
        pass,
        &detail,
        started,
    );
    assert!(pass, "{detail}");
}

fn worst_accuracy(report: &MetricsReport, spec: &EstimatorSpec) -> f64 {
    metrics(report, spec)
        .worst
        .as_ref()
        .and_then(|w| w.accuracy)
        .unwrap_or(f64::NAN)
}

#[test]
fn criterion_7_null_subgroup_detection_tte() {
    let started = Instant::now();
    let scenario = SimScenario::tte(2).unwrap();
    let report = campaign(&scenario, n_sim(100), Vec::new());
    let roster = tte_roster(scenario.assumptions().delta_plan);
    let standard = worst_accuracy(&report, &EstimatorSpec::Standard);
    let mut failures = Vec::new();
    let mut notes = vec![format!("standard {:.0}%", 100.0 * standard)];
    for spec in roster.iter().filter(|e| e.is_bayesian()) {
        let acc = worst_accuracy(&report, spec);
        notes.push(format!("{} {:.0}%", spec.label(), 100.0 * acc));
        if !(acc > standard - 0.05) {
            failures.push(spec.label());
        }
    }
    let pass = failures.is_empty();
    let detail = format!("n_sim {}; {}", report.n_sim, notes.join(", "));
    report_line(7, "null-subgroup detection (TTE)", pass, &detail, started);
    if !smoke() {
        assert!(pass, "{detail}; failed {failures:?}");
    }
}

#[test]
fn criterion_8_null_subgroup_detection_continuous() {
    let started = Instant::now();
    let scenario = SimScenario::continuous(3).unwrap();
    let report = &continuous_reports()[2];
    let roster = continuous_roster_of(&scenario);
    let acc = |pred: &dyn Fn(&EstimatorSpec) -> bool| -> Vec<f64> {
        roster
            .iter()
            .filter(|e| pred(e))
            .map(|e| worst_accuracy(report, e))
            .collect()
    };
    let global = acc(&|e| matches!(e, EstimatorSpec::Global { .. }));
    let one_way = acc(&|e| matches!(e, EstimatorSpec::OneWay { .. }));
    let standard = worst_accuracy(report, &EstimatorSpec::Standard);
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let order_ok = min(&global) > max(&one_way) - 0.05 && min(&one_way) > standard - 0.05;
    let population = metrics(report, &EstimatorSpec::Population { adjusted: false });
    let null = population
        .null_subgroup
        .as_ref()
        .expect("null subgroup metrics");
    let bias_ok = (null.bias - 0.30).abs() <= 0.05;
    let pass = order_ok && bias_ok;
    let pct = |v: &[f64]| {
        v.iter()
            .map(|a| format!("{:.0}", 100.0 * a))
            .collect::<Vec<_>>()
            .join("/")
    };
    let detail = format!(
        "n_sim {}; accuracy global {}% one-way {}% standard {:.0}%; population bias in {} {:.3}",
        report.n_sim,
        pct(&global),
        pct(&one_way),
        100.0 * standard,
        null.label,
        null.bias
    );
    report_line(
        8,
        "null-subgroup detection (continuous)",
        pass,
        &detail,
        started,
    );
    if !smoke() {
        assert!(pass, "{detail}");
    }
}

// ---------------------------------------------------------------- criterion 9

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn criterion_9_determinism() {
    let started = Instant::now();
    let tmp = tempfile::TempDir::new().unwrap();
    let mut csv = String::from("arm,x1,x2,y\n");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..60 {
        let y = 0.3 * (i % 2) as f64 + rng.random_range(-1.5..1.5);
        csv.push_str(&format!(
            "{},{},{},{y:.5}\n",
            i % 2,
            ["a", "b"][(i / 2) % 2],
            ["p", "q", "r"][i % 3]
        ));
    }
    fs::write(tmp.path().join("trial.csv"), csv).unwrap();
    let configs = [
        (
            "analyze",
            r#"command = "analyze"
[data]
path = "trial.csv"
treatment = "arm"
subgroups = ["x1", "x2"]
outcome = "y"
endpoint = "continuous"
[model]
delta_plan = 0.4
sigma_plan = 1.0
[[estimators]]
kind = "standard"
[[estimators]]
kind = "global"
prior = "rhs"
tau0 = 0.4
slab_scale = 2.0
slab_df = 4.0
[sampler]
n_chains = 2
n_warmup = 200
n_draws = 200
"#,
        ),
        (
            "simulate",
            r#"command = "simulate"
estimators = [{ kind = "standard" }, { kind = "one_way", prior = "normal_hn", phi = 0.35 }]
[sampler]
n_chains = 2
n_warmup = 150
n_draws = 150
[simulate]
scenarios = [2]
n_sim = 3
truth_n_large = 20000
"#,
        ),
        (
            "prior-calibrate",
            "command = \"prior-calibrate\"\n[prior_calibrate]\nn_draws = 50000\n",
        ),
    ];
    let mut failures = Vec::new();
    for threads in ["1", "2"] {
        for (command, body) in configs {
            let cfg = tmp.path().join(format!("{command}.toml"));
            fs::write(&cfg, body).unwrap();
            let out = tmp.path().join(format!("out-{command}-{threads}"));
            let run = || {
                let o = Command::new(env!("CARGO_BIN_EXE_subshrink"))
                    .args([command, "--config", cfg.to_str().unwrap(), "--seed", "17"])
                    .args(["--threads", threads, "--out", out.to_str().unwrap()])
                    .output()
                    .unwrap();
                assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
                let files = snapshot(&out);
                fs::remove_dir_all(&out).unwrap();
                files
            };
            let (a, b) = (run(), run());
            if a != b || a.is_empty() {
                failures.push(format!("{command} with {threads} thread(s)"));
            }
        }
    }
    let pass = failures.is_empty();
    let detail = if pass {
        "analyze, simulate and prior-calibrate byte-identical with 1 and 2 threads".to_string()
    } else {
        format!("differs: {}", failures.join(", "))
    };
    report_line(9, "determinism", pass, &detail, started);
    assert!(pass, "{detail}");
}
