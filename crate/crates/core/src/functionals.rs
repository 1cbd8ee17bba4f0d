//! Linear functionals `psi = E_0 u(X; nu, theta)` and smooth maps `g(psi)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::ParamBundle;
use crate::numdiff;
use crate::solver::DrmFit;

/// Integrand `u(x; nu, theta)` with its parameter derivatives. `q_aug` is the
/// augmented basis `Q(x)` at `x`.
pub trait UFunctional: Send + Sync {
    /// `p`.
    fn dim(&self) -> usize;
    fn label(&self) -> &str;
    fn value(&self, x: f64, q_aug: &[f64], bundle: &ParamBundle) -> Vec<f64>;
    /// `p x 2`.
    fn d_nu(&self, x: f64, q_aug: &[f64], bundle: &ParamBundle) -> DMatrix<f64>;
    /// `p x (d + 1)`.
    fn d_theta(&self, x: f64, q_aug: &[f64], bundle: &ParamBundle) -> DMatrix<f64>;
}

/// One component `a_k(x)` of the function `a` in `u = ((1-nu_0) a, (1-nu_1) a omega)`.
#[derive(Clone)]
pub enum AComponent {
    Power(i32),
    XLogX,
    Custom(String, Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for AComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AComponent::Power(k) => write!(f, "Power({k})"),
            AComponent::XLogX => write!(f, "XLogX"),
            AComponent::Custom(name, _) => write!(f, "Custom({name})"),
        }
    }
}

impl AComponent {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            AComponent::Power(k) => x.powi(*k),
            AComponent::XLogX => x * x.ln(),
            AComponent::Custom(_, f) => f(x),
        }
    }
}

/// `u(x) = ((1-nu_0) a(x), (1-nu_1) a(x) omega(x; theta))`, dimension `2m`.
#[derive(Debug, Clone)]
pub struct TwoSampleFunctional {
    label: String,
    components: Vec<AComponent>,
}

impl TwoSampleFunctional {
    pub fn new(label: impl Into<String>, components: Vec<AComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("a(x) needs at least one component".into()));
        }
        for c in &components {
            if let AComponent::Power(k) = c {
                if *k < 1 {
                    return Err(Error::InvalidInput(format!("moment order {k} must be >= 1")));
                }
            }
        }
        Ok(Self {
            label: label.into(),
            components,
        })
    }

    /// `m`.
    pub fn a_dim(&self) -> usize {
        self.components.len()
    }

    pub fn a(&self, x: f64) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }
}

impl UFunctional for TwoSampleFunctional {
    fn dim(&self) -> usize {
        2 * self.components.len()
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn value(&self, x: f64, q_aug: &[f64], bundle: &ParamBundle) -> Vec<f64> {
        let omega = bundle.omega(q_aug);
        let a = self.a(x);
        let mut out: Vec<f64> = a.iter().map(|v| (1.0 - bundle.nu[0]) * v).collect();
        out.extend(a.iter().map(|v| (1.0 - bundle.nu[1]) * v * omega));
        out
    }

    fn d_nu(&self, x: f64, q_aug: &[f64], bundle: &ParamBundle) -> DMatrix<f64> {
        let m = self.components.len();
        let omega = bundle.omega(q_aug);
        let mut d = DMatrix::zeros(2 * m, 2);
        for (k, v) in self.a(x).into_iter().enumerate() {
            d[(k, 0)] = -v;
            d[(m + k, 1)] = -v * omega;
        }
        d
    }

    fn d_theta(&self, x: f64, q_aug: &[f64], bundle: &ParamBundle) -> DMatrix<f64> {
        let m = self.components.len();
        let omega = bundle.omega(q_aug);
        let mut d = DMatrix::zeros(2 * m, q_aug.len());
        for (k, v) in self.a(x).into_iter().enumerate() {
            let s = (1.0 - bundle.nu[1]) * v * omega;
            for (c, q) in q_aug.iter().enumerate() {
                d[(m + k, c)] = s * q;
            }
        }
        d
    }
}

type UEval = Arc<dyn Fn(f64, &[f64], &ParamBundle) -> Vec<f64> + Send + Sync>;

/// A caller-supplied `u` whose derivatives come from central differences.
#[derive(Clone)]
pub struct CustomU {
    dim: usize,
    label: String,
    eval: UEval,
}

impl CustomU {
    pub fn new<F>(dim: usize, label: impl Into<String>, eval: F) -> Self
    where
        F: Fn(f64, &[f64], &ParamBundle) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            label: label.into(),
            eval: Arc::new(eval),
        }
    }
}

impl UFunctional for CustomU {
    fn dim(&self) -> usize {
        self.dim
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn value(&self, x: f64, q_aug: &[f64], bundle: &ParamBundle) -> Vec<f64> {
        (self.eval)(x, q_aug, bundle)
    }

    fn d_nu(&self, x: f64, q_aug: &[f64], bundle: &ParamBundle) -> DMatrix<f64> {
        let f = |nu: &[f64]| {
            let b = ParamBundle {
                nu: [nu[0], nu[1]],
                ..bundle.clone()
            };
            (self.eval)(x, q_aug, &b)
        };
        numdiff::jacobian(f, &bundle.nu)
    }

    fn d_theta(&self, x: f64, q_aug: &[f64], bundle: &ParamBundle) -> DMatrix<f64> {
        let f = |theta: &[f64]| {
            let b = ParamBundle {
                theta: theta.to_vec(),
                ..bundle.clone()
            };
            (self.eval)(x, q_aug, &b)
        };
        numdiff::jacobian(f, &bundle.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinU {
    MomentK,
    MeanPair,
    MeanAndM2,
    MeanAndXlogx,
}

/// Registry entry; `k` is used only by `MomentK`.
pub fn builtin_u(which: BuiltinU, k: i32) -> Result<TwoSampleFunctional> {
    match which {
        BuiltinU::MomentK => TwoSampleFunctional::new(format!("moment_{k}"), vec![AComponent::Power(k)]),
        BuiltinU::MeanPair => TwoSampleFunctional::new("mean_pair", vec![AComponent::Power(1)]),
        BuiltinU::MeanAndM2 => {
            TwoSampleFunctional::new("mean_and_m2", vec![AComponent::Power(1), AComponent::Power(2)])
        }
        BuiltinU::MeanAndXlogx => {
            TwoSampleFunctional::new("mean_and_xlogx", vec![AComponent::Power(1), AComponent::XLogX])
        }
    }
}

/// Parses registry names: `mean_pair`, `mean_and_m2`, `mean_and_xlogx`, `moment_<k>`.
pub fn parse_u(name: &str) -> Result<TwoSampleFunctional> {
    match name {
        "mean_pair" => builtin_u(BuiltinU::MeanPair, 1),
        "mean_and_m2" => builtin_u(BuiltinU::MeanAndM2, 2),
        "mean_and_xlogx" => builtin_u(BuiltinU::MeanAndXlogx, 1),
        other => match other.strip_prefix("moment_").map(str::parse::<i32>) {
            Some(Ok(k)) => builtin_u(BuiltinU::MomentK, k),
            _ => Err(Error::InvalidInput(format!("unknown functional '{other}'"))),
        },
    }
}

/// Smooth `g: R^p -> R^q` with its `q x p` Jacobian.
pub trait SmoothMap: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn label(&self) -> &str;
    fn value(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinG {
    Identity(usize),
    Ratio,
    LogRatio,
    VariancePair,
    VarianceDiff,
    CvPair,
    CvDiff,
    Ge1Pair,
    Ge1Diff,
}

impl BuiltinG {
    pub fn name(&self) -> &'static str {
        match self {
            BuiltinG::Identity(_) => "identity",
            BuiltinG::Ratio => "ratio",
            BuiltinG::LogRatio => "log_ratio",
            BuiltinG::VariancePair => "variance_pair",
            BuiltinG::VarianceDiff => "variance_diff",
            BuiltinG::CvPair => "cv_pair",
            BuiltinG::CvDiff => "cv_diff",
            BuiltinG::Ge1Pair => "ge1_pair",
            BuiltinG::Ge1Diff => "ge1_diff",
        }
    }
}

impl FromStr for BuiltinG {
    type Err = Error;

    /// `identity` parses with `p = 0`; use [`BuiltinG::with_input_dim`] to size it.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => BuiltinG::Identity(0),
            "ratio" => BuiltinG::Ratio,
            "log_ratio" => BuiltinG::LogRatio,
            "variance_pair" => BuiltinG::VariancePair,
            "variance_diff" => BuiltinG::VarianceDiff,
            "cv_pair" => BuiltinG::CvPair,
            "cv_diff" => BuiltinG::CvDiff,
            "ge1_pair" => BuiltinG::Ge1Pair,
            "ge1_diff" => BuiltinG::Ge1Diff,
            other => return Err(Error::InvalidInput(format!("unknown map '{other}'"))),
        })
    }
}

impl BuiltinG {
    pub fn with_input_dim(self, p: usize) -> Self {
        match self {
            BuiltinG::Identity(_) => BuiltinG::Identity(p),
            other => other,
        }
    }
}

pub fn builtin_g(which: BuiltinG) -> BuiltinMap {
    BuiltinMap { which }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuiltinMap {
    which: BuiltinG,
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be positive, got {v}")))
    }
}

/// Variance `x2 - x1^2` of one sample's moment pair.
fn variance(m1: f64, m2: f64) -> Result<f64> {
    let v = m2 - m1 * m1;
    if v < 0.0 {
        return Err(Error::Domain(format!("second moment minus squared mean is {v}")));
    }
    Ok(v)
}

/// `(value, d/dm1, d/dm2)` of `sqrt(m2 - m1^2) / m1`.
fn cv_parts(m1: f64, m2: f64) -> Result<(f64, f64, f64)> {
    positive(m1, "mean")?;
    let s = variance(m1, m2)?.sqrt();
    positive(s, "standard deviation")?;
    Ok((s / m1, -1.0 / s - s / (m1 * m1), 1.0 / (2.0 * s * m1)))
}

/// `(value, d/dm1, d/dm2)` of `m2/m1 - ln m1`.
fn ge1_parts(m1: f64, m2: f64) -> Result<(f64, f64, f64)> {
    positive(m1, "mean")?;
    Ok((m2 / m1 - m1.ln(), -m2 / (m1 * m1) - 1.0 / m1, 1.0 / m1))
}

impl SmoothMap for BuiltinMap {
    fn input_dim(&self) -> usize {
        match self.which {
            BuiltinG::Identity(p) => p,
            BuiltinG::Ratio | BuiltinG::LogRatio => 2,
            _ => 4,
        }
    }

    fn output_dim(&self) -> usize {
        match self.which {
            BuiltinG::Identity(p) => p,
            BuiltinG::VariancePair | BuiltinG::CvPair | BuiltinG::Ge1Pair => 2,
            _ => 1,
        }
    }

    fn label(&self) -> &str {
        self.which.name()
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.input_dim())?;
        Ok(match self.which {
            BuiltinG::Identity(_) => x.to_vec(),
            BuiltinG::Ratio => {
                positive(x[0], "denominator")?;
                vec![x[1] / x[0]]
            }
            BuiltinG::LogRatio => {
                positive(x[0], "denominator")?;
                positive(x[1], "numerator")?;
                vec![x[1].ln() - x[0].ln()]
            }
            BuiltinG::VariancePair => vec![variance(x[0], x[1])?, variance(x[2], x[3])?],
            BuiltinG::VarianceDiff => vec![variance(x[2], x[3])? - variance(x[0], x[1])?],
            BuiltinG::CvPair => vec![cv_parts(x[0], x[1])?.0, cv_parts(x[2], x[3])?.0],
            BuiltinG::CvDiff => vec![cv_parts(x[2], x[3])?.0 - cv_parts(x[0], x[1])?.0],
            BuiltinG::Ge1Pair => vec![ge1_parts(x[0], x[1])?.0, ge1_parts(x[2], x[3])?.0],
            BuiltinG::Ge1Diff => vec![ge1_parts(x[2], x[3])?.0 - ge1_parts(x[0], x[1])?.0],
        })
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_len(x, self.input_dim())?;
        let pair = |f: fn(f64, f64) -> Result<(f64, f64, f64)>, diff: bool| -> Result<DMatrix<f64>> {
            let (_, a1, a2) = f(x[0], x[1])?;
            let (_, b1, b2) = f(x[2], x[3])?;
            Ok(if diff {
                DMatrix::from_row_slice(1, 4, &[-a1, -a2, b1, b2])
            } else {
                DMatrix::from_row_slice(2, 4, &[a1, a2, 0.0, 0.0, 0.0, 0.0, b1, b2])
            })
        };
        fn var_parts(m1: f64, m2: f64) -> Result<(f64, f64, f64)> {
            Ok((variance(m1, m2)?, -2.0 * m1, 1.0))
        }
        match self.which {
            BuiltinG::Identity(p) => Ok(DMatrix::identity(p, p)),
            BuiltinG::Ratio => {
                positive(x[0], "denominator")?;
                Ok(DMatrix::from_row_slice(1, 2, &[-x[1] / (x[0] * x[0]), 1.0 / x[0]]))
            }
            BuiltinG::LogRatio => {
                positive(x[0], "denominator")?;
                positive(x[1], "numerator")?;
                Ok(DMatrix::from_row_slice(1, 2, &[-1.0 / x[0], 1.0 / x[1]]))
            }
            BuiltinG::VariancePair => pair(var_parts, false),
            BuiltinG::VarianceDiff => pair(var_parts, true),
            BuiltinG::CvPair => pair(cv_parts, false),
            BuiltinG::CvDiff => pair(cv_parts, true),
            BuiltinG::Ge1Pair => pair(ge1_parts, false),
            BuiltinG::Ge1Diff => pair(ge1_parts, true),
        }
    }
}

fn check_len(x: &[f64], want: usize) -> Result<()> {
    if x.len() != want {
        return Err(Error::DimensionMismatch {
            expected: want,
            found: x.len(),
        });
    }
    Ok(())
}

/// A caller-supplied map whose Jacobian comes from central differences.
#[derive(Clone)]
pub struct CustomMap {
    p: usize,
    q: usize,
    label: String,
    eval: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl CustomMap {
    pub fn new<F>(p: usize, q: usize, label: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            p,
            q,
            label: label.into(),
            eval: Arc::new(eval),
        }
    }
}

impl SmoothMap for CustomMap {
    fn input_dim(&self) -> usize {
        self.p
    }

    fn output_dim(&self) -> usize {
        self.q
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.p)?;
        let v = (self.eval)(x);
        check_len(&v, self.q)?;
        Ok(v)
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_len(x, self.p)?;
        Ok(numdiff::jacobian(|v| (self.eval)(v), x))
    }
}

/// `psi-hat = sum p-hat_ij u(X_ij; nu-hat, theta-hat)`.
pub fn psi_hat(fit: &DrmFit, u: &dyn UFunctional) -> Result<Vec<f64>> {
    let design = fit.design();
    let p = u.dim();
    let mut acc = vec![crate::numeric::CompensatedSum::new(); p];
    for j in 0..design.len() {
        let v = u.value(design.x(j), design.row(j), &fit.bundle);
        check_len(&v, p)?;
        for (a, vk) in acc.iter_mut().zip(&v) {
            a.add(fit.weights[j] * vk);
        }
    }
    Ok(acc.iter().map(|a| a.value()).collect())
}

/// `(psi-hat, g(psi-hat))`.
pub fn estimate(fit: &DrmFit, u: &dyn UFunctional, g: &dyn SmoothMap) -> Result<(Vec<f64>, Vec<f64>)> {
    if g.input_dim() != u.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            found: g.input_dim(),
        });
    }
    let psi = psi_hat(fit, u)?;
    let g_hat = g.value(&psi)?;
    Ok((psi, g_hat))
}
