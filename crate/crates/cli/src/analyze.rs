//! `analyze`: forest tables, diagnostics and plots for one trial dataset.

use std::path::PathBuf;

use serde::Serialize;
use subgroup_shrink::baselines::{fit_frequentist, forest_table_frequentist, FrequentistOptions};
use subgroup_shrink::design::{Family, ModelSpec, SubgroupId, TrialDataset};
use subgroup_shrink::engine::{fit_shrinkage, FittedModel, SamplerDiagnostics};
use subgroup_shrink::priors::PriorConfig;
use subgroup_shrink::simlab::EstimatorSpec;
use subgroup_shrink::standardize::{
    standardized_effects, write_forest_csv, write_forest_json, EffectScale, ForestRow,
    StandardizeOptions,
};

use crate::config::{OutputFormat, RunConfig};
use crate::error::{CliError, Result};
use crate::output::OutputDir;
use crate::svg::forest_svg;

/// Sampler diagnostics of one Bayesian fit.
#[derive(Debug, Serialize)]
pub struct FitDiagnostics {
    pub estimator: String,
    /// `global` or the subgrouping variable of a one-way model.
    pub model: String,
    pub converged: bool,
    pub parameters: Vec<String>,
    pub diagnostics: SamplerDiagnostics,
}

#[derive(Debug, Serialize)]
struct DiagnosticsFile<'a> {
    warnings: &'a [String],
    fits: &'a [FitDiagnostics],
}

/// Forest rows of one estimator.
#[derive(Debug, Clone)]
pub struct EstimatorTable {
    pub label: String,
    pub rows: Vec<ForestRow>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct AnalyzeOutcome {
    pub tables: Vec<EstimatorTable>,
    pub fits: Vec<FitDiagnostics>,
    pub files: Vec<PathBuf>,
}

impl AnalyzeOutcome {
    pub fn warnings(&self) -> Vec<String> {
        self.tables
            .iter()
            .flat_map(|t| t.warnings.clone())
            .collect()
    }
}

/// File-name friendly version of an estimator label.
pub fn slug(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if c == '.' {
            out.push('p');
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn missing_row(data: &TrialDataset, id: SubgroupId, scale: EffectScale, label: &str) -> ForestRow {
    ForestRow {
        subgroup: data.subgroup_label(id),
        n: data.members(id).map_or(0, |m| m.len()),
        scale,
        point: f64::NAN,
        lower: f64::NAN,
        upper: f64::NAN,
        estimator_label: label.to_string(),
    }
}

struct Analysis<'a> {
    cfg: &'a RunConfig,
    data: &'a TrialDataset,
    family: Family,
    ids: Vec<SubgroupId>,
    fits: Vec<FitDiagnostics>,
}

impl Analysis<'_> {
    fn standardize_options(&self) -> StandardizeOptions {
        StandardizeOptions {
            level: self.cfg.model.level,
            ..self.cfg.standardize()
        }
    }

    fn record_fit(
        &mut self,
        label: &str,
        model: &str,
        fit: &FittedModel,
        warnings: &mut Vec<String>,
    ) {
        let d = &fit.draws.diagnostics;
        if !d.converged {
            warnings.push(format!(
                "`{label}` ({model} model) did not converge: {}",
                d.warnings.join("; ")
            ));
        }
        self.fits.push(FitDiagnostics {
            estimator: label.to_string(),
            model: model.to_string(),
            converged: d.converged,
            parameters: fit.draws.labels().to_vec(),
            diagnostics: d.clone(),
        });
    }

    fn shrinkage_spec(
        &self,
        mode_variable: Option<&str>,
        prior: &PriorConfig,
        extra: &[String],
    ) -> Result<ModelSpec> {
        let assumptions = self.cfg.assumptions()?;
        let mut spec = match mode_variable {
            Some(v) => ModelSpec::one_way(self.family, v, *prior, assumptions),
            None => ModelSpec::global(self.family, *prior, assumptions),
        };
        spec.adjust_for = self.cfg.model.adjust_for.clone();
        for e in extra {
            if !spec.adjust_for.contains(e) {
                spec.adjust_for.push(e.clone());
            }
        }
        Ok(spec)
    }

    fn run(&mut self, estimator: &EstimatorSpec) -> Result<EstimatorTable> {
        let label = estimator.label();
        let scale = EffectScale::for_family(self.family);
        let mut warnings = Vec::new();
        let all_vars: Vec<String> = self
            .data
            .subgroup_vars()
            .iter()
            .map(|v| v.name.clone())
            .collect();
        let rows = match estimator {
            EstimatorSpec::Standard => {
                let opts = FrequentistOptions {
                    level: self.cfg.model.level,
                    estimator_label: label.clone(),
                    ..FrequentistOptions::default()
                };
                let request = self.cfg.forest_request()?;
                let results = forest_table_frequentist(self.data, self.family, &request, &opts)?;
                results
                    .into_iter()
                    .zip(&self.ids)
                    .map(|(r, &id)| match r {
                        Ok(est) => {
                            if !est.converged {
                                warnings.push(format!(
                                    "`{label}` in `{}`: {}",
                                    est.subgroup,
                                    est.note.as_deref().unwrap_or("fit did not converge")
                                ));
                            }
                            est.to_row()
                        }
                        Err(e) => {
                            let row = missing_row(self.data, id, scale, &label);
                            warnings.push(format!("`{label}` in `{}`: {e}", row.subgroup));
                            row
                        }
                    })
                    .collect()
            }
            EstimatorSpec::Population { adjusted } => {
                let opts = FrequentistOptions {
                    adjust_for: if *adjusted { all_vars } else { Vec::new() },
                    level: self.cfg.model.level,
                    estimator_label: label.clone(),
                };
                let everyone: Vec<usize> = (0..self.data.n_subjects()).collect();
                let est = fit_frequentist(
                    self.data,
                    &everyone,
                    self.family,
                    SubgroupId::Population,
                    &opts,
                )?;
                if !est.converged {
                    warnings.push(format!("`{label}`: population fit did not converge"));
                }
                self.ids
                    .iter()
                    .map(|&id| ForestRow {
                        subgroup: self.data.subgroup_label(id),
                        n: self.data.members(id).map_or(0, |m| m.len()),
                        ..est.to_row()
                    })
                    .collect()
            }
            EstimatorSpec::OneWay { prior, adjust_all } => {
                let prior = PriorConfig::with_predictive(*prior);
                let opts = self.standardize_options();
                let mut variables: Vec<usize> = Vec::new();
                for id in &self.ids {
                    if let SubgroupId::Level { variable, .. } = id {
                        if !variables.contains(variable) {
                            variables.push(*variable);
                        }
                    }
                }
                if variables.is_empty() {
                    return Err(CliError::config(
                        "one-way models need at least one subgroup row",
                    ));
                }
                let mut rows: Vec<Option<ForestRow>> = vec![None; self.ids.len()];
                for (k, &j) in variables.iter().enumerate() {
                    let name = all_vars[j].clone();
                    let extra: Vec<String> = if *adjust_all {
                        all_vars.iter().filter(|v| **v != name).cloned().collect()
                    } else {
                        Vec::new()
                    };
                    let spec = self.shrinkage_spec(Some(&name), &prior, &extra)?;
                    let sampler = subgroup_shrink::engine::SamplerConfig {
                        seed: self.cfg.sampler().seed.wrapping_add(j as u64),
                        ..self.cfg.sampler()
                    };
                    let fit = fit_shrinkage(self.data, &spec, &sampler)?;
                    self.record_fit(&label, &name, &fit, &mut warnings);
                    // The population row comes from the first variable's model.
                    let wanted: Vec<usize> = (0..self.ids.len())
                        .filter(|&i| match self.ids[i] {
                            SubgroupId::Population => k == 0,
                            SubgroupId::Level { variable, .. } => variable == j,
                        })
                        .collect();
                    let ids: Vec<SubgroupId> = wanted.iter().map(|&i| self.ids[i]).collect();
                    let effects = standardized_effects(&fit, &ids, &label, &opts)?;
                    for (i, e) in wanted.into_iter().zip(effects) {
                        rows[i] = Some(e.to_row());
                    }
                }
                rows.into_iter()
                    .map(|r| r.expect("every row fitted"))
                    .collect()
            }
            EstimatorSpec::Global { prior } => {
                let prior = PriorConfig::with_predictive(*prior);
                let spec = self.shrinkage_spec(None, &prior, &[])?;
                let fit = fit_shrinkage(self.data, &spec, &self.cfg.sampler())?;
                self.record_fit(&label, "global", &fit, &mut warnings);
                standardized_effects(&fit, &self.ids, &label, &self.standardize_options())?
                    .iter()
                    .map(|e| e.to_row())
                    .collect()
            }
        };
        Ok(EstimatorTable {
            label,
            rows,
            warnings,
        })
    }
}

/// Runs every configured estimator and writes the requested outputs.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalyzeOutcome> {
    let (family, roles, path) = cfg.resolved_data()?;
    let data = TrialDataset::from_csv(path, &roles)?;
    let ids = cfg.forest_request()?.resolve(&data)?;
    let estimators = if cfg.estimators.is_empty() {
        vec![EstimatorSpec::Standard]
    } else {
        cfg.estimators.clone()
    };
    if estimators.iter().any(|e| e.is_bayesian()) {
        cfg.assumptions()?;
    }
    let mut labels: Vec<String> = estimators.iter().map(|e| slug(&e.label())).collect();
    labels.sort();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::config("estimator list contains duplicates"));
    }
    let mut analysis = Analysis {
        cfg,
        data: &data,
        family,
        ids,
        fits: Vec::new(),
    };
    let mut tables = Vec::with_capacity(estimators.len());
    for e in &estimators {
        log::info!("fitting `{}`", e.label());
        tables.push(analysis.run(e)?);
    }
    let fits = analysis.fits;

    let out = OutputDir::create(&cfg.out)?;
    let mut files = vec![out.write_text(crate::config::EFFECTIVE_CONFIG, &cfg.to_toml()?)?];
    for t in &tables {
        let stem = format!("forest_{}", slug(&t.label));
        if cfg.wants(OutputFormat::Csv) {
            let mut buf = Vec::new();
            write_forest_csv(&t.rows, &mut buf)?;
            files.push(out.write_bytes(&format!("{stem}.csv"), &buf)?);
        }
        if cfg.wants(OutputFormat::Json) {
            let mut buf = Vec::new();
            write_forest_json(&t.rows, &mut buf)?;
            files.push(out.write_bytes(&format!("{stem}.json"), &buf)?);
        }
        if cfg.wants(OutputFormat::Svg) {
            let svg = forest_svg(&t.label, &t.rows, &t.warnings);
            files.push(out.write_text(&format!("{stem}.svg"), &svg)?);
        }
    }
    let warnings: Vec<String> = tables.iter().flat_map(|t| t.warnings.clone()).collect();
    let diag = serde_json::to_string_pretty(&DiagnosticsFile {
        warnings: &warnings,
        fits: &fits,
    })
    .map_err(subgroup_shrink::Error::from)?;
    files.push(out.write_text("diagnostics.json", &diag)?);
    Ok(AnalyzeOutcome {
        tables,
        fits,
        files,
    })
}
