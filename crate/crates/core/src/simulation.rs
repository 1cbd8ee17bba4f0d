//! Log-normal mixture scenarios and a Monte Carlo harness for bias, MSE,
//! coverage and interval length.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::gamma_hat;
use crate::error::{Error, Result};
use crate::functionals::{builtin_g, builtin_u, psi_hat, BuiltinG, BuiltinU, SmoothMap};
use crate::inference::{
    bootstrap_wald, log_ratio_statistic, nonparam_estimates, nonparam_log_ratio_interval, wald_from_parts,
    BootstrapKind, BootstrapOptions, CiMethod, IntervalResult,
};
use crate::model::{make_basis, BasisKind, TwoSampleData};
use crate::numeric::normal_quantile;
use crate::solver::{fit, SolverOptions};

/// `F_i = v_i delta_0 + (1 - v_i) LN(a_i, b_i)`, sampled at sizes `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureScenario {
    pub name: String,
    pub v: [f64; 2],
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub n: [usize; 2],
}

/// `(v0, v1, a0, a1)` of the ten presets; all use `b = 1`.
const PRESETS: [(f64, f64, f64, f64); 10] = [
    (0.3, 0.3, 0.0, 0.0),
    (0.7, 0.7, 0.0, 0.0),
    (0.3, 0.5, 0.33, 0.66),
    (0.5, 0.7, 0.37, 0.89),
    (0.5, 0.3, 0.0, 0.0),
    (0.7, 0.5, 0.0, 0.0),
    (0.6, 0.4, 0.0, 0.0),
    (0.3, 0.3, 0.0, 0.5),
    (0.7, 0.7, 0.0, 0.75),
    (0.4, 0.6, 0.0, 1.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub mu: [f64; 2],
    pub var: [f64; 2],
    pub delta: f64,
}

impl MixtureScenario {
    pub fn new(name: impl Into<String>, v: [f64; 2], a: [f64; 2], b: [f64; 2], n: [usize; 2]) -> Result<Self> {
        let s = MixtureScenario {
            name: name.into(),
            v,
            a,
            b,
            n,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..2 {
            if !(self.v[i] > 0.0 && self.v[i] < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "v{i} must be in (0, 1), got {}",
                    self.v[i]
                )));
            }
            if !(self.b[i] > 0.0) || !self.a[i].is_finite() || !self.b[i].is_finite() {
                return Err(Error::InvalidInput(format!("log-normal {i} needs finite a and b > 0")));
            }
            if self.n[i] == 0 {
                return Err(Error::EmptySample(i));
            }
        }
        Ok(())
    }

    /// Preset `model1` .. `model10` at sizes `n`.
    pub fn preset(k: usize, n: [usize; 2]) -> Result<Self> {
        let &(v0, v1, a0, a1) = PRESETS
            .get(k.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidInput(format!("no preset model{k}; expected 1..=10")))?;
        Self::new(format!("model{k}"), [v0, v1], [a0, a1], [1.0, 1.0], n)
    }

    pub fn with_sizes(mut self, n0: usize, n1: usize) -> Self {
        self.n = [n0, n1];
        self
    }

    pub fn mean(&self, i: usize) -> f64 {
        (1.0 - self.v[i]) * (self.a[i] + self.b[i] / 2.0).exp()
    }

    /// Raw second moment `E X^2`.
    pub fn second_moment(&self, i: usize) -> f64 {
        (1.0 - self.v[i]) * (2.0 * self.a[i] + 2.0 * self.b[i]).exp()
    }

    pub fn variance(&self, i: usize) -> f64 {
        let (v, e) = (self.v[i], (2.0 * self.a[i] + self.b[i]).exp());
        (1.0 - v) * e * (self.b[i].exp() - 1.0) + v * (1.0 - v) * e
    }

    pub fn truth(&self) -> Truth {
        Truth {
            mu: [self.mean(0), self.mean(1)],
            var: [self.variance(0), self.variance(1)],
            delta: self.mean(1) / self.mean(0),
        }
    }

    pub fn w(&self) -> f64 {
        self.n[0] as f64 / (self.n[0] + self.n[1]) as f64
    }

    /// Limit of `rho-hat`.
    pub fn true_rho(&self) -> f64 {
        let w = self.w();
        let delta = w * (1.0 - self.v[0]) + (1.0 - w) * (1.0 - self.v[1]);
        (1.0 - w) * (1.0 - self.v[1]) / delta
    }

    /// `(alpha, beta)` of the log basis. `None` when `b0 != b1`, where the
    /// log basis does not contain the true density ratio.
    pub fn true_theta_log(&self) -> Option<[f64; 2]> {
        if self.b[0] != self.b[1] {
            return None;
        }
        let b = self.b[0];
        let (a0, a1) = (self.a[0], self.a[1]);
        Some([(a0 * a0 - a1 * a1) / (2.0 * b), (a1 - a0) / b])
    }

    /// `(nu0, nu1, rho, alpha, beta)` for the log basis.
    pub fn true_eta_log(&self) -> Option<Vec<f64>> {
        let th = self.true_theta_log()?;
        Some(vec![self.v[0], self.v[1], self.true_rho(), th[0], th[1]])
    }
}

impl FromStr for MixtureScenario {
    type Err = Error;

    /// `model<k>` at the default sizes `(100, 100)`.
    fn from_str(s: &str) -> Result<Self> {
        let k = s
            .trim()
            .strip_prefix("model")
            .and_then(|k| k.parse::<usize>().ok())
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario '{s}'; expected model1..model10")))?;
        Self::preset(k, [100, 100])
    }
}

fn positive_uniform<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Draws one data set from stream `stream` of `seed`.
pub fn generate(scenario: &MixtureScenario, seed: u64, stream: u64) -> Result<TwoSampleData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut raw: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (i, out) in raw.iter_mut().enumerate() {
        let sd = scenario.b[i].sqrt();
        *out = (0..scenario.n[i])
            .map(|_| {
                if rng.random::<f64>() < scenario.v[i] {
                    0.0
                } else {
                    (scenario.a[i] + sd * normal_quantile(positive_uniform(&mut rng))).exp()
                }
            })
            .collect();
    }
    let zeros = |x: &[f64]| x.iter().filter(|v| **v == 0.0).count();
    let [x0, x1] = raw;
    let (z0, z1) = (zeros(&x0), zeros(&x1));
    let pos = |x: Vec<f64>| x.into_iter().filter(|v| *v > 0.0).collect::<Vec<_>>();
    TwoSampleData::new(pos(x0), z0, pos(x1), z1)
}

/// Runs `f(r, data_r)` for `r in 0..reps` on `workers` threads; results are
/// in replicate order.
pub fn run_replicates<T, F>(scenario: &MixtureScenario, reps: usize, seed: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, Result<TwoSampleData>) -> T + Sync + Send,
{
    let run = |r: usize| f(r, generate(scenario, seed, r as u64));
    if workers <= 1 {
        return Ok((0..reps).map(run).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(pool.install(|| (0..reps).into_par_iter().map(run).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub reps: usize,
    pub seed: u64,
    pub workers: usize,
    pub cis: Vec<CiMethod>,
    pub gamma: f64,
    pub bootstrap_reps: usize,
    pub bootstrap_kind: BootstrapKind,
    pub basis: BasisKind,
    pub solver: SolverOptions,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            reps: 1000,
            seed: 1,
            workers: 1,
            cis: vec![CiMethod::I4, CiMethod::I4L],
            gamma: 0.05,
            bootstrap_reps: 999,
            bootstrap_kind: BootstrapKind::Studentized,
            basis: BasisKind::Log,
            solver: SolverOptions::default(),
        }
    }
}

/// Point estimates and intervals from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub delta_hat: f64,
    pub delta_tilde: f64,
    pub var_hat: [f64; 2],
    pub var_tilde: [f64; 2],
    pub intervals: Vec<IntervalResult>,
}

/// Names of the estimators summarized by [`run_study`], in report order.
pub const ESTIMATORS: [&str; 6] = [
    "delta_hat",
    "delta_tilde",
    "var0_hat",
    "var0_tilde",
    "var1_hat",
    "var1_tilde",
];

impl Replicate {
    fn values(&self) -> [f64; 6] {
        [
            self.delta_hat,
            self.delta_tilde,
            self.var_hat[0],
            self.var_tilde[0],
            self.var_hat[1],
            self.var_tilde[1],
        ]
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::BoundaryNu(_) => "boundary_nu",
        Error::NonConvergence { .. } => "non_convergence",
        Error::SeparationSuspected { .. } => "separation_suspected",
        Error::OverflowGuard(_) => "overflow",
        Error::SingularAtheta { .. } | Error::SingularGamma { .. } => "singular",
        Error::NegativeVariance(_) => "negative_variance",
        Error::DegenerateResample(_) => "degenerate_resample",
        Error::NoPositives(_) | Error::EmptySample(_) => "no_positives",
        _ => "other",
    }
}

/// One replicate: fit with `mean_and_m2`, derive the mean ratio and variances,
/// and build the requested intervals for the mean ratio.
pub fn analyze_replicate(data: &TwoSampleData, opts: &StudyOptions, boot_seed: u64) -> Result<Replicate> {
    let basis = make_basis(opts.basis)?;
    let f = fit(data, &basis, &opts.solver)?;
    f.require_interior()?;
    let u = builtin_u(BuiltinU::MeanAndM2, 2)?;
    let psi = psi_hat(&f, &u)?;
    let var_hat = builtin_g(BuiltinG::VariancePair).value(&psi)?;
    let ratio = builtin_g(BuiltinG::Ratio);
    let means = [psi[0], psi[2]];
    let delta_hat = ratio.value(&means)?[0];
    let np = nonparam_estimates(data, |x| x)?;

    let mut intervals = Vec::with_capacity(opts.cis.len());
    let needs_gamma = opts.cis.iter().any(|m| matches!(m, CiMethod::I4 | CiMethod::I4L));
    let sigma = if needs_gamma {
        // The (mean0, mean1) block of Gamma for mean_and_m2 is Gamma for mean_pair.
        let g = gamma_hat(&f, &u)?;
        let j = ratio.jacobian(&means)?;
        let (j0, j1) = (j[(0, 0)], j[(0, 1)]);
        let v = j0 * j0 * g[(0, 0)] + 2.0 * j0 * j1 * g[(0, 2)] + j1 * j1 * g[(2, 2)];
        if v < 0.0 {
            return Err(Error::NegativeVariance(v));
        }
        (v / f.n() as f64).sqrt()
    } else {
        0.0
    };
    for m in &opts.cis {
        intervals.push(match m {
            CiMethod::I4 => wald_from_parts(delta_hat, sigma, opts.gamma, false)?,
            CiMethod::I4L => wald_from_parts(delta_hat, sigma, opts.gamma, true)?,
            CiMethod::I1 => nonparam_log_ratio_interval(data, opts.gamma)?,
            CiMethod::I1B => bootstrap_wald(
                data,
                log_ratio_statistic,
                opts.gamma,
                &BootstrapOptions {
                    reps: opts.bootstrap_reps,
                    seed: boot_seed,
                    kind: opts.bootstrap_kind,
                    workers: 1,
                },
            )?,
        });
    }
    Ok(Replicate {
        delta_hat,
        delta_tilde: np.delta,
        var_hat: [var_hat[0], var_hat[1]],
        var_tilde: np.var,
        intervals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiSummary {
    pub method: CiMethod,
    /// Percent of intervals strictly containing the true mean ratio.
    pub cp: f64,
    pub al: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub scenario: MixtureScenario,
    pub truth: Truth,
    pub reps: usize,
    pub seed: u64,
    pub gamma: f64,
    pub bootstrap_reps: Option<usize>,
    pub successes: usize,
    pub failures: BTreeMap<String, usize>,
    pub estimators: Vec<EstimatorSummary>,
    pub intervals: Vec<CiSummary>,
    /// Not serialized, so reports are reproducible byte for byte.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl McReport {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.name == name)
    }

    pub fn interval(&self, method: CiMethod) -> Option<&CiSummary> {
        self.intervals.iter().find(|c| c.method == method)
    }
}

/// Bootstrap seed for replicate `r`, kept apart from the data stream.
fn bootstrap_seed(seed: u64, r: usize) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(r as u64 + 1)
}

/// Monte Carlo study. Failed replicates are excluded from every aggregate
/// and tallied in `failures` by error kind.
pub fn run_study(scenario: &MixtureScenario, opts: &StudyOptions) -> Result<McReport> {
    scenario.validate()?;
    if opts.reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    let start = Instant::now();
    let outcomes = run_replicates(scenario, opts.reps, opts.seed, opts.workers, |r, data| {
        data.and_then(|d| analyze_replicate(&d, opts, bootstrap_seed(opts.seed, r)))
    })?;
    let truth = scenario.truth();
    let targets = [
        truth.delta,
        truth.delta,
        truth.var[0],
        truth.var[0],
        truth.var[1],
        truth.var[1],
    ];
    let mut failures = BTreeMap::new();
    let mut err = [0.0; 6];
    let mut sq = [0.0; 6];
    let mut covered = vec![0usize; opts.cis.len()];
    let mut length = vec![0.0; opts.cis.len()];
    let mut ok = 0usize;
    for o in &outcomes {
        match o {
            Ok(rep) => {
                ok += 1;
                for (k, v) in rep.values().iter().enumerate() {
                    let e = v - targets[k];
                    err[k] += e;
                    sq[k] += e * e;
                }
                for (k, ci) in rep.intervals.iter().enumerate() {
                    covered[k] += usize::from(ci.covers(truth.delta));
                    length[k] += ci.length();
                }
            }
            Err(e) => *failures.entry(error_kind(e).to_string()).or_insert(0) += 1,
        }
    }
    let denom = ok.max(1) as f64;
    let nan_if_empty = |x: f64| if ok == 0 { f64::NAN } else { x / denom };
    let estimators = ESTIMATORS
        .iter()
        .enumerate()
        .map(|(k, name)| EstimatorSummary {
            name: name.to_string(),
            truth: targets[k],
            bias: nan_if_empty(err[k]),
            mse: nan_if_empty(sq[k]),
        })
        .collect();
    let intervals = opts
        .cis
        .iter()
        .enumerate()
        .map(|(k, m)| CiSummary {
            method: *m,
            cp: nan_if_empty(100.0 * covered[k] as f64),
            al: nan_if_empty(length[k]),
        })
        .collect();
    Ok(McReport {
        scenario: scenario.clone(),
        truth,
        reps: opts.reps,
        seed: opts.seed,
        gamma: opts.gamma,
        bootstrap_reps: opts.cis.contains(&CiMethod::I1B).then_some(opts.bootstrap_reps),
        successes: ok,
        failures,
        estimators,
        intervals,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}
