//! Wald intervals and tests for `g(psi)`, plus the fully nonparametric
//! baselines (`I1`, `I1B`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::asymptotics::{gamma_g_hat, spd_inverse};
use crate::error::{Error, Result};
use crate::functionals::{estimate, SmoothMap, UFunctional};
use crate::model::TwoSampleData;
use crate::numeric::z_two_sided;
use crate::solver::DrmFit;

/// Levels always reported in [`TestResult::reject_at`].
pub const REPORTED_LEVELS: [f64; 3] = [0.01, 0.05, 0.10];

/// Redraw cap for a bootstrap draw whose resample is degenerate.
pub const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CiMethod {
    /// Wald interval on `log` of the nonparametric ratio.
    I1,
    /// Bootstrap version of `I1`.
    I1B,
    /// Wald interval on the semiparametric estimate.
    I4,
    /// Wald interval on the log scale, exponentiated.
    I4L,
}

impl CiMethod {
    pub const ALL: [CiMethod; 4] = [CiMethod::I1, CiMethod::I1B, CiMethod::I4, CiMethod::I4L];

    pub fn name(&self) -> &'static str {
        match self {
            CiMethod::I1 => "I1",
            CiMethod::I1B => "I1B",
            CiMethod::I4 => "I4",
            CiMethod::I4L => "I4L",
        }
    }
}

impl fmt::Display for CiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I1" => Ok(CiMethod::I1),
            "I1B" => Ok(CiMethod::I1B),
            "I4" => Ok(CiMethod::I4),
            "I4L" => Ok(CiMethod::I4L),
            other => Err(Error::InvalidInput(format!("unknown interval method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapKind {
    /// Quantiles of `(l* - l) / se*`, reflected.
    #[default]
    Studentized,
    /// Quantiles of `l*` directly.
    Percentile,
}

impl FromStr for BootstrapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "studentized" | "t" => Ok(BootstrapKind::Studentized),
            "percentile" => Ok(BootstrapKind::Percentile),
            other => Err(Error::InvalidInput(format!("unknown bootstrap kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapMeta {
    pub reps: usize,
    pub kind: BootstrapKind,
    /// Draws that had to be regenerated because a resample was degenerate.
    pub redraws: usize,
    /// Draws dropped after [`MAX_REDRAWS`] attempts.
    pub failed_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalResult {
    pub method: CiMethod,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    /// On the scale the interval was built on (log scale for `I1`, `I1B`, `I4L`).
    pub se: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bootstrap: Option<BootstrapMeta>,
}

impl IntervalResult {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    /// Strict containment.
    pub fn covers(&self, value: f64) -> bool {
        self.lower < value && value < self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Keyed by level formatted as e.g. `"0.05"`.
    pub reject_at: BTreeMap<String, bool>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("gamma must be in (0, 1), got {gamma}")))
    }
}

/// Interval from an estimate and its standard error `sigma` (already scaled
/// by `1/sqrt(n)`). With `log_transform` the interval is built for `ln phi`
/// with standard error `sigma / phi` and exponentiated.
pub fn wald_from_parts(phi: f64, sigma: f64, gamma: f64, log_transform: bool) -> Result<IntervalResult> {
    check_gamma(gamma)?;
    if !(sigma >= 0.0) {
        return Err(Error::NegativeVariance(sigma));
    }
    let z = z_two_sided(gamma);
    let level = 1.0 - gamma;
    if log_transform {
        if !(phi > 0.0) {
            return Err(Error::NonPositivePhi(phi));
        }
        let se = sigma / phi;
        let l = phi.ln();
        Ok(IntervalResult {
            method: CiMethod::I4L,
            estimate: phi,
            lower: (l - z * se).exp(),
            upper: (l + z * se).exp(),
            level,
            se,
            bootstrap: None,
        })
    } else {
        Ok(IntervalResult {
            method: CiMethod::I4,
            estimate: phi,
            lower: phi - z * sigma,
            upper: phi + z * sigma,
            level,
            se: sigma,
            bootstrap: None,
        })
    }
}

fn scalar_sigma(gamma_g: &DMatrix<f64>, n: usize) -> Result<f64> {
    let v = gamma_g[(0, 0)];
    if v < 0.0 {
        return Err(Error::NegativeVariance(v));
    }
    Ok((v / n as f64).sqrt())
}

/// `I4` or `I4L` for a scalar `phi = g(psi)`.
pub fn wald_interval(
    fit: &DrmFit,
    u: &dyn UFunctional,
    g: &dyn SmoothMap,
    gamma: f64,
    log_transform: bool,
) -> Result<IntervalResult> {
    if g.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: g.output_dim(),
        });
    }
    let (_, phi) = estimate(fit, u, g)?;
    let gg = gamma_g_hat(fit, u, g)?;
    let sigma = scalar_sigma(&gg, fit.n())?;
    wald_from_parts(phi[0], sigma, gamma, log_transform)
}

/// Maps a Wald interval built on the log scale back to the original scale;
/// the result is labelled `I4L`. `se` stays on the log scale.
pub fn exponentiate(r: IntervalResult) -> IntervalResult {
    IntervalResult {
        method: CiMethod::I4L,
        estimate: r.estimate.exp(),
        lower: r.lower.exp(),
        upper: r.upper.exp(),
        ..r
    }
}

fn level_key(level: f64) -> String {
    format!("{level:.2}")
}

/// Wald statistic for `H0: g(psi) = null` from the parts.
pub fn wald_test_from_parts(
    g_hat: &[f64],
    null_value: &[f64],
    gamma_g: &DMatrix<f64>,
    n: usize,
    gamma: f64,
) -> Result<TestResult> {
    check_gamma(gamma)?;
    let q = g_hat.len();
    if null_value.len() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            found: null_value.len(),
        });
    }
    if gamma_g.shape() != (q, q) {
        return Err(Error::DimensionMismatch {
            expected: q,
            found: gamma_g.nrows(),
        });
    }
    let (inv, condition) = spd_inverse(gamma_g);
    let inv = inv.ok_or(Error::SingularGamma { condition })?;
    let d = DVector::from_iterator(q, g_hat.iter().zip(null_value).map(|(a, b)| a - b));
    let statistic = (n as f64 * (d.transpose() * inv * &d)[(0, 0)]).max(0.0);
    let chi = ChiSquared::new(q as f64).map_err(|e| Error::Domain(e.to_string()))?;
    let p_value = chi.sf(statistic).clamp(0.0, 1.0);
    // For one degree of freedom the critical value is z^2, so the decision
    // agrees exactly with whether the Wald interval excludes the null.
    let critical = |lvl: f64| {
        if q == 1 {
            z_two_sided(lvl).powi(2)
        } else {
            chi.inverse_cdf(1.0 - lvl)
        }
    };
    let mut reject_at = BTreeMap::new();
    for lvl in REPORTED_LEVELS.iter().copied().chain(std::iter::once(gamma)) {
        reject_at.insert(level_key(lvl), statistic > critical(lvl));
    }
    Ok(TestResult {
        statistic,
        df: q,
        p_value,
        reject_at,
    })
}

/// `n (g(psi-hat) - null)' Gamma_g^{-1} (g(psi-hat) - null)` against chi-square(q).
pub fn wald_region_test(
    fit: &DrmFit,
    u: &dyn UFunctional,
    g: &dyn SmoothMap,
    null_value: &[f64],
    gamma: f64,
) -> Result<TestResult> {
    let (_, g_hat) = estimate(fit, u, g)?;
    let gg = gamma_g_hat(fit, u, g)?;
    wald_test_from_parts(&g_hat, null_value, &gg, fit.n(), gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonparamEstimates {
    /// Sample means of `a(X)` over all observations, zeros included.
    pub psi: [f64; 2],
    pub delta: f64,
    /// Sample variances of `a(X)` with the `n - 1` denominator.
    pub var: [f64; 2],
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, ss / (n - 1.0))
}

/// Empirical means and variances of `a(X)` in each sample.
pub fn nonparam_estimates<A: Fn(f64) -> f64>(data: &TwoSampleData, a: A) -> Result<NonparamEstimates> {
    let mut psi = [0.0; 2];
    let mut var = [0.0; 2];
    for i in 0..2 {
        if data.n(i) < 2 {
            return Err(Error::DivisionByZero(format!(
                "sample {i} needs at least two observations"
            )));
        }
        let vals: Vec<f64> = data.raw(i).into_iter().map(&a).collect();
        (psi[i], var[i]) = mean_var(&vals);
    }
    Ok(NonparamEstimates {
        psi,
        delta: psi[1] / psi[0],
        var,
    })
}

/// `(ln(mean1/mean0), se)` from two raw samples, or `None` when either mean
/// is not positive or a sample is too small.
pub fn log_ratio_statistic(x0: &[f64], x1: &[f64]) -> Option<(f64, f64)> {
    if x0.len() < 2 || x1.len() < 2 {
        return None;
    }
    let (m0, v0) = mean_var(x0);
    let (m1, v1) = mean_var(x1);
    if !(m0 > 0.0 && m1 > 0.0) {
        return None;
    }
    let se = (v0 / (x0.len() as f64 * m0 * m0) + v1 / (x1.len() as f64 * m1 * m1)).sqrt();
    if !(se > 0.0 && se.is_finite()) {
        return None;
    }
    Some(((m1 / m0).ln(), se))
}

/// `I1`: Wald interval for `ln delta-tilde`, exponentiated.
pub fn nonparam_log_ratio_interval(data: &TwoSampleData, gamma: f64) -> Result<IntervalResult> {
    check_gamma(gamma)?;
    let (l, se) = log_ratio_statistic(&data.raw(0), &data.raw(1))
        .ok_or_else(|| Error::Domain("log-ratio statistic undefined for these samples".into()))?;
    let z = z_two_sided(gamma);
    Ok(IntervalResult {
        method: CiMethod::I1,
        estimate: l.exp(),
        lower: (l - z * se).exp(),
        upper: (l + z * se).exp(),
        level: 1.0 - gamma,
        se,
        bootstrap: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub reps: usize,
    pub seed: u64,
    pub kind: BootstrapKind,
    /// `1` runs serially on the calling thread.
    pub workers: usize,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            reps: 999,
            seed: 0,
            kind: BootstrapKind::Studentized,
            workers: 1,
        }
    }
}

fn resample<R: Rng>(x: &[f64], rng: &mut R) -> Vec<f64> {
    (0..x.len()).map(|_| x[rng.random_range(0..x.len())]).collect()
}

enum Draw {
    Ok { stat: f64, se: f64, redraws: usize },
    Failed,
}

fn one_draw<E>(x0: &[f64], x1: &[f64], estimator: &E, seed: u64, b: usize) -> Draw
where
    E: Fn(&[f64], &[f64]) -> Option<(f64, f64)>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    for attempt in 0..MAX_REDRAWS {
        let r0 = resample(x0, &mut rng);
        let r1 = resample(x1, &mut rng);
        if !r0.iter().any(|v| *v > 0.0) || !r1.iter().any(|v| *v > 0.0) {
            continue;
        }
        if let Some((stat, se)) = estimator(&r0, &r1) {
            return Draw::Ok {
                stat,
                se,
                redraws: attempt,
            };
        }
    }
    Draw::Failed
}

/// Order statistic `k = floor((B + 1) p)`, clamped to `1..=B` (1-based).
fn order_stat(sorted: &[f64], p: f64) -> f64 {
    let b = sorted.len();
    let k = (((b + 1) as f64 * p).floor() as usize).clamp(1, b);
    sorted[k - 1]
}

/// Bootstrap interval for `exp(l)` where `estimator` returns a log-scale
/// statistic `l` and its standard error from two raw samples. Each draw
/// resamples both samples at their original sizes with its own RNG stream, so
/// the result depends only on `opts.seed`.
pub fn bootstrap_wald<E>(
    data: &TwoSampleData,
    estimator: E,
    gamma: f64,
    opts: &BootstrapOptions,
) -> Result<IntervalResult>
where
    E: Fn(&[f64], &[f64]) -> Option<(f64, f64)> + Sync,
{
    check_gamma(gamma)?;
    if opts.reps == 0 {
        return Err(Error::InvalidInput("bootstrap needs at least one replicate".into()));
    }
    let x0 = data.raw(0);
    let x1 = data.raw(1);
    let (l_hat, se_hat) =
        estimator(&x0, &x1).ok_or_else(|| Error::Domain("statistic undefined on the observed samples".into()))?;
    let run = |b: usize| one_draw(&x0, &x1, &estimator, opts.seed, b);
    let draws: Vec<Draw> = if opts.workers <= 1 {
        (0..opts.reps).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        pool.install(|| (0..opts.reps).into_par_iter().map(run).collect())
    };
    let mut redraws = 0;
    let mut failed_draws = 0;
    let mut values = Vec::with_capacity(draws.len());
    for d in draws {
        match d {
            Draw::Ok { stat, se, redraws: r } => {
                redraws += r;
                values.push(match opts.kind {
                    BootstrapKind::Studentized => (stat - l_hat) / se,
                    BootstrapKind::Percentile => stat,
                });
            }
            Draw::Failed => failed_draws += 1,
        }
    }
    if values.is_empty() {
        return Err(Error::DegenerateResample(format!(
            "all {} draws failed after {MAX_REDRAWS} attempts each",
            opts.reps
        )));
    }
    values.sort_by(f64::total_cmp);
    let lo = order_stat(&values, gamma / 2.0);
    let hi = order_stat(&values, 1.0 - gamma / 2.0);
    let (lower, upper) = match opts.kind {
        BootstrapKind::Studentized => ((l_hat - hi * se_hat).exp(), (l_hat - lo * se_hat).exp()),
        BootstrapKind::Percentile => (lo.exp(), hi.exp()),
    };
    Ok(IntervalResult {
        method: CiMethod::I1B,
        estimate: l_hat.exp(),
        lower,
        upper,
        level: 1.0 - gamma,
        se: se_hat,
        bootstrap: Some(BootstrapMeta {
            reps: opts.reps,
            kind: opts.kind,
            redraws,
            failed_draws,
        }),
    })
}
