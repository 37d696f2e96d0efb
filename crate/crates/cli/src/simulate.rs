//! `simulate`: simulation campaigns over the built-in scenarios.

use std::path::PathBuf;

use subgroup_shrink::simlab::{
    run_campaign, write_summary_table, CampaignConfig, EndpointKind, MetricsReport, SimScenario,
};

use crate::config::{RunConfig, EFFECTIVE_CONFIG};
use crate::error::Result;
use crate::output::OutputDir;

#[derive(Debug)]
pub struct SimulateOutcome {
    pub reports: Vec<MetricsReport>,
    pub files: Vec<PathBuf>,
}

impl SimulateOutcome {
    pub fn warnings(&self) -> Vec<String> {
        self.reports
            .iter()
            .flat_map(|r| {
                r.warnings
                    .iter()
                    .map(move |w| format!("{}: {w}", r.scenario))
            })
            .collect()
    }
}

fn scenario_ids(endpoint: EndpointKind, requested: &[u8]) -> Vec<u8> {
    if !requested.is_empty() {
        return requested.to_vec();
    }
    match endpoint {
        EndpointKind::Tte => vec![1, 2, 3, 4],
        EndpointKind::Continuous => vec![1, 2, 3],
    }
}

/// Runs one campaign per scenario and writes per-scenario reports plus a summary table.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateOutcome> {
    let sim = &cfg.simulate;
    let campaign = CampaignConfig {
        n_sim: sim.n_sim,
        seed: cfg.seed,
        sampler: cfg.sampler(),
        standardize: cfg.standardize(),
        estimators: cfg.estimators.clone(),
        truth_n_large: sim.truth_n_large,
        truth_seed: sim.truth_seed,
    };
    campaign.validate()?;
    let scenarios: Vec<SimScenario> = scenario_ids(sim.endpoint, &sim.scenarios)
        .into_iter()
        .map(|id| SimScenario::from_kind(sim.endpoint, id))
        .collect::<subgroup_shrink::Result<_>>()?;

    let mut reports = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        log::info!("simulating {} ({} replicates)", s.name(), campaign.n_sim);
        reports.push(run_campaign(s, &campaign)?);
    }

    let out = OutputDir::create(&cfg.out)?;
    let mut files = vec![out.write_text(EFFECTIVE_CONFIG, &cfg.to_toml()?)?];
    for r in &reports {
        let mut buf = Vec::new();
        r.write_json(&mut buf)?;
        files.push(out.write_bytes(&format!("report_{}.json", r.scenario), &buf)?);
    }
    let mut buf = Vec::new();
    write_summary_table(&reports, &mut buf)?;
    files.push(out.write_bytes("summary.csv", &buf)?);
    Ok(SimulateOutcome { reports, files })
}
