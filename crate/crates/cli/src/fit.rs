//! `zidrm fit`: estimates, intervals and tests on observed data.

use serde::Serialize;
use zidrm_core::functionals::{estimate, parse_u};
use zidrm_core::inference::{
    bootstrap_wald, exponentiate, log_ratio_statistic, nonparam_estimates, nonparam_log_ratio_interval, wald_interval,
    wald_region_test, BootstrapOptions, TestResult,
};
use zidrm_core::solver::FitDiagnostics;
use zidrm_core::{
    builtin_g, builtin_u, fit, load_two_sample, make_basis, BuiltinG, BuiltinU, CiMethod, IntervalResult, SmoothMap,
    TwoSampleData, TwoSampleFunctional, UFunctional,
};

use crate::config::{AnalysisConfig, DataSource};
use crate::input::{read_grouped, read_values};
use crate::table::{fmt4, Table};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FunctionalEstimate {
    pub functional: String,
    pub map: String,
    pub psi: Vec<f64>,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Estimates {
    pub n: [usize; 2],
    pub zeros: [usize; 2],
    pub zero_proportions: [f64; 2],
    pub rho: f64,
    pub basis: String,
    pub theta: Vec<f64>,
    pub delta_hat: f64,
    pub var_hat: [f64; 2],
    pub delta_tilde: f64,
    pub var_tilde: [f64; 2],
    pub functionals: Vec<FunctionalEstimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetInterval {
    pub target: String,
    #[serde(flatten)]
    pub interval: IntervalResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetTest {
    pub target: String,
    pub null: Vec<f64>,
    #[serde(flatten)]
    pub result: TestResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub fit: FitDiagnostics,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub estimates: Estimates,
    pub intervals: Vec<TargetInterval>,
    pub tests: Vec<TargetTest>,
    pub diagnostics: Diagnostics,
    pub config_echo: serde_json::Value,
}

/// Target name of the nonparametric intervals.
pub const MEAN_RATIO: &str = "mean_ratio";

pub fn load_data(cfg: &AnalysisConfig) -> Result<TwoSampleData, CliError> {
    let [x0, x1] = match &cfg.source {
        DataSource::Files { input0, input1 } => [read_values(input0)?, read_values(input1)?],
        DataSource::Grouped { input } => read_grouped(input)?,
        DataSource::Scenarios { .. } => return Err(CliError::Usage("fit needs input files".into())),
    };
    load_two_sample(&x0, &x1, cfg.zero_tol).map_err(|e| CliError::Input(e.to_string()))
}

fn resolve_map(name: &str, u: &TwoSampleFunctional) -> Result<Box<dyn SmoothMap>, CliError> {
    let which: BuiltinG = name
        .parse()
        .map_err(|e: zidrm_core::Error| CliError::Usage(e.to_string()))?;
    let g = builtin_g(which.with_input_dim(u.a_dim() * 2));
    if g.input_dim() != u.a_dim() * 2 {
        return Err(CliError::Usage(format!(
            "map `{name}` takes {} inputs but functional `{}` has {}",
            g.input_dim(),
            u.label(),
            u.a_dim() * 2
        )));
    }
    Ok(Box::new(g))
}

/// Pairs `--functional` with `--map`; a single entry on either side is
/// broadcast.
pub fn pairs(cfg: &AnalysisConfig) -> Result<Vec<(TwoSampleFunctional, Box<dyn SmoothMap>)>, CliError> {
    let (f, m) = (&cfg.functionals, &cfg.maps);
    if f.is_empty() || m.is_empty() {
        return Err(CliError::Usage("need at least one functional and one map".into()));
    }
    let n = f.len().max(m.len());
    if (f.len() != n && f.len() != 1) || (m.len() != n && m.len() != 1) {
        return Err(CliError::Usage(format!(
            "{} functionals cannot be paired with {} maps",
            f.len(),
            m.len()
        )));
    }
    (0..n)
        .map(|k| {
            let u = parse_u(&f[k.min(f.len() - 1)]).map_err(|e| CliError::Usage(e.to_string()))?;
            let g = resolve_map(&m[k.min(m.len() - 1)], &u)?;
            Ok((u, g))
        })
        .collect()
}

pub fn run_fit(cfg: &AnalysisConfig) -> Result<FitReport, CliError> {
    let pairs = pairs(cfg)?;
    let data = load_data(cfg)?;
    let basis = make_basis(cfg.basis).map_err(|e| CliError::Usage(e.to_string()))?;
    let f = fit(&data, &basis, &cfg.solver)?;
    let mut warnings = f.diagnostics.warnings.clone();

    let m2 = builtin_u(BuiltinU::MeanAndM2, 2)?;
    let (psi, var_hat) = estimate(&f, &m2, &builtin_g(BuiltinG::VariancePair))?;
    let np = nonparam_estimates(&data, |x| x).map_err(|e| CliError::Input(e.to_string()))?;

    let mut functionals = Vec::new();
    let mut intervals = Vec::new();
    let mut tests = Vec::new();
    for (u, g) in &pairs {
        let target = format!("{}/{}", u.label(), g.label());
        let (psi_u, value) = estimate(&f, u, g.as_ref())?;
        for m in &cfg.cis {
            let res = match m {
                CiMethod::I4 => wald_interval(&f, u, g.as_ref(), cfg.gamma, false),
                // A log-scale map is already the log-composed map.
                CiMethod::I4L if g.label().starts_with("log_") => {
                    wald_interval(&f, u, g.as_ref(), cfg.gamma, false).map(exponentiate)
                }
                CiMethod::I4L => wald_interval(&f, u, g.as_ref(), cfg.gamma, true),
                _ => continue,
            };
            match res {
                Ok(interval) => intervals.push(TargetInterval {
                    target: target.clone(),
                    interval,
                }),
                Err(e) => warnings.push(format!("{m} for {target}: {e}")),
            }
        }
        let null = match &cfg.test_null {
            Some(v) if v.len() == value.len() => Some(v.clone()),
            Some(_) => None,
            None if g.label().ends_with("_diff") => Some(vec![0.0]),
            None => None,
        };
        if let Some(null) = null {
            match wald_region_test(&f, u, g.as_ref(), &null, cfg.gamma) {
                Ok(result) => tests.push(TargetTest {
                    target: target.clone(),
                    null,
                    result,
                }),
                Err(e) => warnings.push(format!("test for {target}: {e}")),
            }
        }
        functionals.push(FunctionalEstimate {
            functional: u.label().to_string(),
            map: g.label().to_string(),
            psi: psi_u,
            value,
        });
    }
    for m in &cfg.cis {
        let res = match m {
            CiMethod::I1 => nonparam_log_ratio_interval(&data, cfg.gamma),
            CiMethod::I1B => bootstrap_wald(
                &data,
                log_ratio_statistic,
                cfg.gamma,
                &BootstrapOptions {
                    reps: cfg.bootstrap_b,
                    seed: cfg.seed,
                    kind: cfg.bootstrap_kind,
                    workers: cfg.workers,
                },
            ),
            _ => continue,
        };
        match res {
            Ok(interval) => intervals.push(TargetInterval {
                target: MEAN_RATIO.into(),
                interval,
            }),
            Err(e) => warnings.push(format!("{m} for {MEAN_RATIO}: {e}")),
        }
    }

    Ok(FitReport {
        estimates: Estimates {
            n: [data.n(0), data.n(1)],
            zeros: [data.zeros(0), data.zeros(1)],
            zero_proportions: f.bundle.nu,
            rho: f.bundle.rho,
            basis: basis.label().to_string(),
            theta: f.bundle.theta.clone(),
            delta_hat: psi[2] / psi[0],
            var_hat: [var_hat[0], var_hat[1]],
            delta_tilde: np.delta,
            var_tilde: np.var,
            functionals,
        },
        intervals,
        tests,
        diagnostics: Diagnostics {
            fit: f.diagnostics.clone(),
            warnings,
        },
        config_echo: cfg.echo(),
    })
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt4(*x)).collect::<Vec<_>>().join(", ")
}

pub fn render_fit_table(r: &FitReport) -> String {
    let e = &r.estimates;
    let mut out = String::new();
    let mut t = Table::new(&["quantity", "sample 0", "sample 1"]);
    t.row(vec!["n".into(), e.n[0].to_string(), e.n[1].to_string()]);
    t.row(vec!["zeros".into(), e.zeros[0].to_string(), e.zeros[1].to_string()]);
    t.row(vec![
        "zero proportion".into(),
        fmt4(e.zero_proportions[0]),
        fmt4(e.zero_proportions[1]),
    ]);
    t.row(vec!["variance (DRM)".into(), fmt4(e.var_hat[0]), fmt4(e.var_hat[1])]);
    t.row(vec![
        "variance (empirical)".into(),
        fmt4(e.var_tilde[0]),
        fmt4(e.var_tilde[1]),
    ]);
    out.push_str(&t.render());
    out.push('\n');
    let mut t = Table::new(&["estimate", "value"]);
    t.row(vec!["rho".into(), fmt4(e.rho)]);
    t.row(vec![format!("theta ({})", e.basis), join(&e.theta)]);
    t.row(vec!["mean ratio (DRM)".into(), fmt4(e.delta_hat)]);
    t.row(vec!["mean ratio (empirical)".into(), fmt4(e.delta_tilde)]);
    for fe in &e.functionals {
        t.row(vec![format!("{}/{}", fe.functional, fe.map), join(&fe.value)]);
    }
    out.push_str(&t.render());
    if !r.intervals.is_empty() {
        out.push('\n');
        let mut t = Table::new(&["target", "method", "estimate", "lower", "upper", "level"]);
        for i in &r.intervals {
            let iv = &i.interval;
            t.row(vec![
                i.target.clone(),
                iv.method.to_string(),
                fmt4(iv.estimate),
                fmt4(iv.lower),
                fmt4(iv.upper),
                fmt4(iv.level),
            ]);
        }
        out.push_str(&t.render());
    }
    if !r.tests.is_empty() {
        out.push('\n');
        let mut t = Table::new(&["test", "null", "statistic", "df", "p-value"]);
        for s in &r.tests {
            t.row(vec![
                s.target.clone(),
                join(&s.null),
                fmt4(s.result.statistic),
                s.result.df.to_string(),
                fmt4(s.result.p_value),
            ]);
        }
        out.push_str(&t.render());
    }
    let d = &r.diagnostics;
    out.push_str(&format!(
        "\nconverged: {} in {} iterations (gradient {:.2e})\n",
        d.fit.converged, d.fit.iterations, d.fit.grad_norm
    ));
    for w in &d.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}
