//! Aggregation of replicate estimates into RMSE, bias, coverage and
//! worst-subgroup accuracy, with Monte Carlo standard errors.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::campaign::ReplicateOutcome;
use super::truth::TrueEffects;
use super::SimScenario;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl RangeSummary {
    fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupMetrics {
    pub label: String,
    pub truth: f64,
    pub rmse: f64,
    pub bias: f64,
    pub coverage: f64,
    /// Monte Carlo standard errors; `None` with fewer than two replicates.
    pub rmse_mcse: Option<f64>,
    pub bias_mcse: Option<f64>,
    pub coverage_mcse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSubgroupMetrics {
    pub label: String,
    pub truth: f64,
    pub rmse: f64,
    pub bias: f64,
    pub coverage: f64,
    pub bias_mcse: Option<f64>,
}

/// Performance in the subgroup with the worst predicted effect of each replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstSubgroupMetrics {
    /// Fraction of replicates whose worst predicted subgroup is the null subgroup.
    pub accuracy: Option<f64>,
    pub accuracy_mcse: Option<f64>,
    pub rmse: f64,
    pub bias: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub label: String,
    pub n_success: usize,
    pub n_failed: usize,
    /// Successful replicates whose sampler flagged convergence problems.
    pub n_nonconverged: usize,
    pub rmse_overall: f64,
    pub rmse_overall_mcse: Option<f64>,
    /// RMSE_overall divided by the standard estimator's (if present).
    pub standardized_rmse: Option<f64>,
    pub subgroups: Vec<SubgroupMetrics>,
    pub rmse_summary: RangeSummary,
    pub abs_bias_summary: RangeSummary,
    pub coverage_summary: RangeSummary,
    pub null_subgroup: Option<NullSubgroupMetrics>,
    /// Absent when the estimator gives every subgroup the same estimate.
    pub worst: Option<WorstSubgroupMetrics>,
    pub failure_messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub n_sim: usize,
    pub subgroup_labels: Vec<String>,
    pub truth: Vec<f64>,
    pub estimators: Vec<EstimatorMetrics>,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn estimator(&self, label: &str) -> Option<&EstimatorMetrics> {
        self.estimators.iter().find(|e| e.label == label)
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// MCSE of a root mean square from the per-replicate squares (delta method).
fn rms_mcse(squares: &[f64], rms: f64) -> Option<f64> {
    (squares.len() >= 2).then(|| {
        if rms > 0.0 {
            sd(squares) / (2.0 * rms * (squares.len() as f64).sqrt())
        } else {
            0.0
        }
    })
}

/// Index of the worst estimate (ties go to the lowest index).
fn worst_index(estimates: &[f64], larger_is_worse: bool) -> usize {
    let mut best = 0;
    for (k, &e) in estimates.iter().enumerate().skip(1) {
        let worse = if larger_is_worse {
            e > estimates[best]
        } else {
            e < estimates[best]
        };
        if worse {
            best = k;
        }
    }
    best
}

/// Summarizes replicate outcomes against the truth.
pub fn aggregate(
    scenario: &SimScenario,
    truth: &TrueEffects,
    estimator_labels: &[String],
    outcomes: &[ReplicateOutcome],
) -> Result<MetricsReport> {
    let k = truth.theta.len();
    let null_index = match scenario.null_subgroup() {
        Some((var, level)) => Some(truth.index_of(&format!("{var}={level}")).ok_or_else(|| {
            Error::config(format!("null subgroup {var}={level} missing from truth"))
        })?),
        None => None,
    };
    let mut estimators = Vec::with_capacity(estimator_labels.len());
    for (e, label) in estimator_labels.iter().enumerate() {
        let mut ok = Vec::new();
        let mut failures = Vec::new();
        for o in outcomes {
            match o.results.get(e) {
                Some(Ok(r)) => {
                    if r.estimate.len() != k {
                        return Err(Error::Dimension {
                            context: "replicate estimates",
                            expected: k,
                            got: r.estimate.len(),
                        });
                    }
                    ok.push(r);
                }
                Some(Err(msg)) => failures.push(format!("replicate {}: {msg}", o.replicate)),
                None => failures.push(format!("replicate {}: estimator missing", o.replicate)),
            }
        }
        let n = ok.len();
        let nf = n as f64;
        let mut subgroups = Vec::with_capacity(k);
        for j in 0..k {
            let err: Vec<f64> = ok.iter().map(|r| r.estimate[j] - truth.theta[j]).collect();
            let sq: Vec<f64> = err.iter().map(|x| x * x).collect();
            let hits: Vec<f64> = ok
                .iter()
                .map(|r| {
                    f64::from(u8::from(
                        r.lower[j] <= truth.theta[j] && truth.theta[j] <= r.upper[j],
                    ))
                })
                .collect();
            let rmse = (sq.iter().sum::<f64>() / nf).sqrt();
            let cov = hits.iter().sum::<f64>() / nf;
            subgroups.push(SubgroupMetrics {
                label: truth.labels[j].clone(),
                truth: truth.theta[j],
                rmse,
                bias: err.iter().sum::<f64>() / nf,
                coverage: cov,
                rmse_mcse: rms_mcse(&sq, rmse),
                bias_mcse: (n >= 2).then(|| sd(&err) / nf.sqrt()),
                coverage_mcse: (n >= 2).then(|| (cov * (1.0 - cov) / nf).sqrt()),
            });
        }
        let per_rep: Vec<f64> = ok
            .iter()
            .map(|r| {
                (0..k)
                    .map(|j| (r.estimate[j] - truth.theta[j]).powi(2))
                    .sum::<f64>()
                    / k as f64
            })
            .collect();
        let rmse_overall = (per_rep.iter().sum::<f64>() / nf).sqrt();
        let null_subgroup = null_index.map(|j| {
            let s = &subgroups[j];
            NullSubgroupMetrics {
                label: s.label.clone(),
                truth: s.truth,
                rmse: s.rmse,
                bias: s.bias,
                coverage: s.coverage,
                bias_mcse: s.bias_mcse,
            }
        });
        let constant = ok
            .iter()
            .all(|r| r.estimate.iter().all(|v| *v == r.estimate[0]));
        let worst = (!constant && n > 0).then(|| {
            let idx: Vec<usize> = ok
                .iter()
                .map(|r| worst_index(&r.estimate, scenario.larger_is_worse()))
                .collect();
            let err: Vec<f64> = ok
                .iter()
                .zip(&idx)
                .map(|(r, &j)| r.estimate[j] - truth.theta[j])
                .collect();
            let cov = ok
                .iter()
                .zip(&idx)
                .filter(|(r, &j)| r.lower[j] <= truth.theta[j] && truth.theta[j] <= r.upper[j])
                .count() as f64
                / nf;
            let accuracy =
                null_index.map(|nj| idx.iter().filter(|&&j| j == nj).count() as f64 / nf);
            WorstSubgroupMetrics {
                accuracy,
                accuracy_mcse: accuracy
                    .filter(|_| n >= 2)
                    .map(|a| (a * (1.0 - a) / nf).sqrt()),
                rmse: (err.iter().map(|x| x * x).sum::<f64>() / nf).sqrt(),
                bias: err.iter().sum::<f64>() / nf,
                coverage: cov,
            }
        });
        estimators.push(EstimatorMetrics {
            label: label.clone(),
            n_success: n,
            n_failed: failures.len(),
            n_nonconverged: ok.iter().filter(|r| !r.converged).count(),
            rmse_overall,
            rmse_overall_mcse: rms_mcse(&per_rep, rmse_overall),
            standardized_rmse: None,
            rmse_summary: RangeSummary::of(subgroups.iter().map(|s| s.rmse)),
            abs_bias_summary: RangeSummary::of(subgroups.iter().map(|s| s.bias.abs())),
            coverage_summary: RangeSummary::of(subgroups.iter().map(|s| s.coverage)),
            subgroups,
            null_subgroup,
            worst,
            failure_messages: failures,
        });
    }
    if let Some(reference) = estimators
        .iter()
        .find(|e| e.label == "standard")
        .map(|e| e.rmse_overall)
    {
        for e in &mut estimators {
            e.standardized_rmse = Some(if e.label == "standard" {
                1.0
            } else {
                e.rmse_overall / reference
            });
        }
    }
    let mut warnings = Vec::new();
    for e in &estimators {
        if e.n_success < 2 {
            warnings.push(format!(
                "`{}`: {} successful replicate(s); Monte Carlo standard errors are undefined",
                e.label, e.n_success
            ));
        }
        if e.n_failed > 0 {
            warnings.push(format!(
                "`{}`: {} replicate(s) failed and were excluded",
                e.label, e.n_failed
            ));
        }
    }
    Ok(MetricsReport {
        scenario: scenario.name(),
        n_sim: outcomes.len(),
        subgroup_labels: truth.labels.clone(),
        truth: truth.theta.clone(),
        estimators,
        warnings,
    })
}

fn cell(s: &RangeSummary, factor: f64) -> String {
    format!(
        "{:.0} ({:.0}-{:.0})",
        s.mean * factor,
        s.min * factor,
        s.max * factor
    )
}

/// Paper-style summary: one row per metric and estimator, one column per scenario,
/// each cell `mean (min-max)` across subgroups.
pub fn write_summary_table<W: Write>(reports: &[MetricsReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["metric".to_string(), "estimator".to_string()];
    header.extend(reports.iter().map(|r| r.scenario.clone()));
    w.write_record(&header)?;
    let mut labels: Vec<&str> = Vec::new();
    for r in reports {
        for e in &r.estimators {
            if !labels.contains(&e.label.as_str()) {
                labels.push(&e.label);
            }
        }
    }
    type Extract = fn(&EstimatorMetrics) -> Option<String>;
    let metrics: [(&str, Extract); 5] = [
        ("standardized RMSE_overall", |e| {
            e.standardized_rmse.map(|v| format!("{v:.3}"))
        }),
        ("RMSE*100", |e| Some(cell(&e.rmse_summary, 100.0))),
        ("|Bias|*100", |e| Some(cell(&e.abs_bias_summary, 100.0))),
        ("Coverage (%)", |e| Some(cell(&e.coverage_summary, 100.0))),
        ("Worst-subgroup accuracy (%)", |e| {
            e.worst
                .as_ref()
                .and_then(|w| w.accuracy)
                .map(|a| format!("{:.0}", 100.0 * a))
        }),
    ];
    for (name, f) in metrics {
        for label in &labels {
            let mut row = vec![name.to_string(), label.to_string()];
            row.extend(
                reports
                    .iter()
                    .map(|r| r.estimator(label).and_then(f).unwrap_or_default()),
            );
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
