//! `zidrm simulate`: Monte Carlo studies over preset or custom scenarios.

use serde::Serialize;
use zidrm_core::simulation::ESTIMATORS;
use zidrm_core::{run_study, McReport, MixtureScenario, StudyOptions};

use crate::config::{AnalysisConfig, DataSource};
use crate::table::{fmt4, Table};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub reports: Vec<McReport>,
    pub config_echo: serde_json::Value,
}

pub fn scenarios(cfg: &AnalysisConfig) -> Result<Vec<MixtureScenario>, CliError> {
    let DataSource::Scenarios {
        models,
        sizes,
        scenario_file,
    } = &cfg.source
    else {
        return Err(CliError::Usage("simulate needs --model or --scenario-file".into()));
    };
    let mut out = Vec::new();
    for m in models {
        let base: MixtureScenario = m
            .parse()
            .map_err(|e: zidrm_core::Error| CliError::Usage(e.to_string()))?;
        for &[n0, n1] in sizes {
            out.push(base.clone().with_sizes(n0, n1));
        }
    }
    if let Some(path) = scenario_file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let s: MixtureScenario =
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        s.validate().map_err(|e| CliError::Input(e.to_string()))?;
        out.push(s);
    }
    if out.is_empty() {
        return Err(CliError::Usage("no scenarios to run".into()));
    }
    Ok(out)
}

pub fn study_options(cfg: &AnalysisConfig) -> StudyOptions {
    StudyOptions {
        reps: cfg.reps,
        seed: cfg.seed,
        workers: cfg.workers,
        cis: cfg.cis.clone(),
        gamma: cfg.gamma,
        bootstrap_reps: cfg.bootstrap_b,
        bootstrap_kind: cfg.bootstrap_kind,
        basis: cfg.basis,
        solver: cfg.solver,
    }
}

pub fn run_simulate(cfg: &AnalysisConfig) -> Result<SimReport, CliError> {
    if cfg.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let opts = study_options(cfg);
    let mut reports = Vec::new();
    for s in scenarios(cfg)? {
        reports.push(run_study(&s, &opts)?);
    }
    Ok(SimReport {
        reports,
        config_echo: cfg.echo(),
    })
}

/// One row per scenario and sample-size pair: bias and MSE of each
/// estimator, then CP (%) and AL of each interval.
pub fn render_sim_table(r: &SimReport) -> String {
    let mut header: Vec<String> = vec!["model".into(), "(n0,n1)".into()];
    for e in ESTIMATORS {
        header.push(format!("{e} bias"));
        header.push(format!("{e} MSE"));
    }
    let methods: Vec<_> = r
        .reports
        .first()
        .map(|rep| rep.intervals.iter().map(|c| c.method).collect())
        .unwrap_or_default();
    for m in &methods {
        header.push(format!("{m} CP"));
        header.push(format!("{m} AL"));
    }
    header.push("ok/reps".into());
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&refs);
    for rep in &r.reports {
        let mut row = vec![
            rep.scenario.name.clone(),
            format!("({},{})", rep.scenario.n[0], rep.scenario.n[1]),
        ];
        for e in &rep.estimators {
            row.push(fmt4(e.bias));
            row.push(fmt4(e.mse));
        }
        for c in &rep.intervals {
            row.push(format!("{:.1}", c.cp));
            row.push(fmt4(c.al));
        }
        row.push(format!("{}/{}", rep.successes, rep.reps));
        t.row(row);
    }
    let mut out = t.render();
    for rep in &r.reports {
        for (kind, count) in &rep.failures {
            out.push_str(&format!(
                "{} ({},{}): {count} replicates excluded ({kind})\n",
                rep.scenario.name, rep.scenario.n[0], rep.scenario.n[1]
            ));
        }
    }
    out
}
