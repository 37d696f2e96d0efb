//! `prior-calibrate`: implied prior quantiles of subgroup effects.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;
use subgroup_shrink::priors::{marginal_prior_quantiles, PredictivePrior, PriorFunctional};

use crate::config::{RunConfig, EFFECTIVE_CONFIG};
use crate::error::{CliError, Result};
use crate::output::OutputDir;

/// Quantiles of one prior and functional.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileRow {
    pub prior: String,
    pub functional: PriorFunctional,
    pub probs: Vec<f64>,
    pub quantiles: Vec<f64>,
}

#[derive(Debug)]
pub struct CalibrateOutcome {
    pub rows: Vec<QuantileRow>,
    pub files: Vec<PathBuf>,
}

fn describe(p: &PredictivePrior) -> String {
    match *p {
        PredictivePrior::NormalHn { phi } => format!("normal_hn phi={phi}"),
        PredictivePrior::RegularizedHorseshoe {
            tau0,
            slab_scale,
            slab_df,
        } => format!("rhs tau0={tau0} s={slab_scale} nu={slab_df}"),
    }
}

fn functional_name(f: PriorFunctional) -> &'static str {
    match f {
        PriorFunctional::AbsCoef => "abs_coef",
        PriorFunctional::AbsPairwiseDiff => "abs_pairwise_diff",
    }
}

/// Plain-text table for the terminal.
pub fn format_table(rows: &[QuantileRow]) -> String {
    let mut s = String::new();
    let Some(first) = rows.first() else {
        return s;
    };
    let width = rows.iter().map(|r| r.prior.len()).max().unwrap_or(5).max(5);
    let _ = write!(s, "{:<width$}  {:<17}", "prior", "functional");
    for p in &first.probs {
        let _ = write!(s, "  {:>10}", format!("q{p}"));
    }
    s.push('\n');
    for r in rows {
        let _ = write!(
            s,
            "{:<width$}  {:<17}",
            r.prior,
            functional_name(r.functional)
        );
        for q in &r.quantiles {
            let _ = write!(s, "  {q:>10.4}");
        }
        s.push('\n');
    }
    s
}

fn to_csv(rows: &[QuantileRow]) -> String {
    let mut s = String::from("prior,functional,prob,quantile\n");
    for r in rows {
        for (p, q) in r.probs.iter().zip(&r.quantiles) {
            let _ = writeln!(s, "{},{},{p},{q}", r.prior, functional_name(r.functional));
        }
    }
    s
}

/// Monte Carlo quantiles of |beta| and |beta_i - beta_j| for each configured prior.
pub fn cmd_prior_calibrate(cfg: &RunConfig) -> Result<CalibrateOutcome> {
    let pc = &cfg.prior_calibrate;
    if pc.priors.is_empty() {
        return Err(CliError::config("prior_calibrate.priors is empty"));
    }
    let mut rows = Vec::new();
    for prior in &pc.priors {
        for functional in [PriorFunctional::AbsCoef, PriorFunctional::AbsPairwiseDiff] {
            // Same seed for every prior, so scale changes compare like with like.
            let quantiles =
                marginal_prior_quantiles(prior, functional, &pc.probs, pc.n_draws, cfg.seed)?;
            rows.push(QuantileRow {
                prior: describe(prior),
                functional,
                probs: pc.probs.clone(),
                quantiles,
            });
        }
    }
    let out = OutputDir::create(&cfg.out)?;
    let mut files = vec![out.write_text(EFFECTIVE_CONFIG, &cfg.to_toml()?)?];
    if cfg.wants(crate::config::OutputFormat::Csv) {
        files.push(out.write_text("prior_quantiles.csv", &to_csv(&rows))?);
    }
    if cfg.wants(crate::config::OutputFormat::Json) {
        let json = serde_json::to_string_pretty(&rows).map_err(subgroup_shrink::Error::from)?;
        files.push(out.write_text("prior_quantiles.json", &json)?);
    }
    Ok(CalibrateOutcome { rows, files })
}
