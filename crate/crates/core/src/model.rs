//! Two-sample zero-inflated data, DRM basis functions and parameter bundles.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::mix_weights;

/// Two independent samples, each split into a zero count and the strictly
/// positive observations (kept in input order).
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSampleData {
    positives: [Vec<f64>; 2],
    zeros: [usize; 2],
    negatives_mapped: [usize; 2],
}

impl TwoSampleData {
    /// Builds the data set from already-split positives and zero counts.
    pub fn new(positive0: Vec<f64>, n00: usize, positive1: Vec<f64>, n10: usize) -> Result<Self> {
        let positives = [positive0, positive1];
        for (i, pos) in positives.iter().enumerate() {
            if let Some(&bad) = pos.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "sample {i} contains non-positive or non-finite value {bad}"
                )));
            }
            if pos.is_empty() {
                return Err(Error::NoPositives(i));
            }
        }
        Ok(Self {
            positives,
            zeros: [n00, n10],
            negatives_mapped: [0, 0],
        })
    }

    /// Positive observations of sample `i`.
    pub fn positives(&self, i: usize) -> &[f64] {
        &self.positives[i]
    }

    /// `n_{i0}`.
    pub fn zeros(&self, i: usize) -> usize {
        self.zeros[i]
    }

    /// `n_{i1}`.
    pub fn n_positive(&self, i: usize) -> usize {
        self.positives[i].len()
    }

    /// `n_i = n_{i0} + n_{i1}`.
    pub fn n(&self, i: usize) -> usize {
        self.zeros[i] + self.positives[i].len()
    }

    pub fn n_total(&self) -> usize {
        self.n(0) + self.n(1)
    }

    /// `w = n_0 / n`.
    pub fn w(&self) -> f64 {
        self.n(0) as f64 / self.n_total() as f64
    }

    /// Observed zero proportion of sample `i`.
    pub fn zero_fraction(&self, i: usize) -> f64 {
        self.zeros[i] as f64 / self.n(i) as f64
    }

    /// `rho-hat = n_{11} / (n_{01} + n_{11})`.
    pub fn rho_hat(&self) -> f64 {
        self.n_positive(1) as f64 / self.pooled_positive_count() as f64
    }

    pub fn pooled_positive_count(&self) -> usize {
        self.n_positive(0) + self.n_positive(1)
    }

    /// Pooled positives, sample 0 first, each tagged with its sample.
    pub fn pooled(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.positives[0]
            .iter()
            .map(|&x| (0, x))
            .chain(self.positives[1].iter().map(|&x| (1, x)))
    }

    /// Full sample `i` including its zeros (positives first).
    pub fn raw(&self, i: usize) -> Vec<f64> {
        let mut v = self.positives[i].clone();
        v.extend(std::iter::repeat_n(0.0, self.zeros[i]));
        v
    }

    /// Count of strictly negative inputs that were mapped to zero.
    pub fn negatives_mapped(&self, i: usize) -> usize {
        self.negatives_mapped[i]
    }

    pub fn warnings(&self) -> Vec<String> {
        (0..2)
            .filter(|&i| self.negatives_mapped[i] > 0)
            .map(|i| {
                format!(
                    "sample {i}: {} negative value(s) treated as zero",
                    self.negatives_mapped[i]
                )
            })
            .collect()
    }
}

/// Splits two raw samples into zeros and positives. Values `<= zero_tol`
/// count as zeros; negative values are kept as zeros with a warning.
pub fn load_two_sample(raw0: &[f64], raw1: &[f64], zero_tol: f64) -> Result<TwoSampleData> {
    if !(zero_tol >= 0.0) {
        return Err(Error::InvalidInput(format!("zero_tol must be >= 0, got {zero_tol}")));
    }
    let mut positives = [Vec::new(), Vec::new()];
    let mut zeros = [0usize; 2];
    let mut negatives = [0usize; 2];
    for (i, raw) in [raw0, raw1].into_iter().enumerate() {
        if raw.is_empty() {
            return Err(Error::EmptySample(i));
        }
        for &x in raw {
            if !x.is_finite() {
                return Err(Error::InvalidInput(format!("sample {i} contains {x}")));
            }
            if x <= zero_tol {
                zeros[i] += 1;
                if x < 0.0 {
                    negatives[i] += 1;
                }
            } else {
                positives[i].push(x);
            }
        }
        if positives[i].is_empty() {
            return Err(Error::NoPositives(i));
        }
    }
    let [p0, p1] = positives;
    let mut data = TwoSampleData::new(p0, zeros[0], p1, zeros[1])?;
    data.negatives_mapped = negatives;
    Ok(data)
}

/// Built-in choices of the DRM basis `q(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Log,
    Identity,
    LogAndIdentity,
    Custom,
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(BasisKind::Log),
            "identity" => Ok(BasisKind::Identity),
            "log+identity" | "log_and_identity" => Ok(BasisKind::LogAndIdentity),
            other => Err(Error::InvalidInput(format!("unknown basis '{other}'"))),
        }
    }
}

type BasisEval = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// The DRM basis `q(x)` of dimension `d`; `Q(x) = (1, q(x)')'`.
#[derive(Clone)]
pub struct BasisFunction {
    kind: BasisKind,
    dim: usize,
    label: String,
    eval: BasisEval,
}

impl fmt::Debug for BasisFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BasisFunction")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish()
    }
}

impl BasisFunction {
    pub fn new(kind: BasisKind) -> Result<Self> {
        let (dim, label, eval): (usize, &str, BasisEval) = match kind {
            BasisKind::Log => (1, "log", Arc::new(|x, out| out[0] = x.ln())),
            BasisKind::Identity => (1, "identity", Arc::new(|x, out| out[0] = x)),
            BasisKind::LogAndIdentity => (
                2,
                "log+identity",
                Arc::new(|x, out| {
                    out[0] = x.ln();
                    out[1] = x;
                }),
            ),
            BasisKind::Custom => {
                return Err(Error::InvalidInput(
                    "custom basis requires BasisFunction::custom".into(),
                ))
            }
        };
        Ok(Self {
            kind,
            dim,
            label: label.to_string(),
            eval,
        })
    }

    /// A caller-supplied basis; `eval` writes `q(x)` into a slice of length `dim`.
    pub fn custom<F>(dim: usize, label: impl Into<String>, eval: F) -> Result<Self>
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidInput("basis dimension must be >= 1".into()));
        }
        Ok(Self {
            kind: BasisKind::Custom,
            dim,
            label: label.into(),
            eval: Arc::new(eval),
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn q(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.eval)(x, &mut out);
        out
    }

    /// `Q(x) = (1, q(x)')'`, length `d + 1`.
    pub fn augmented(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim + 1];
        out[0] = 1.0;
        (self.eval)(x, &mut out[1..]);
        out
    }
}

/// Shorthand for the built-in bases.
pub fn make_basis(kind: BasisKind) -> Result<BasisFunction> {
    BasisFunction::new(kind)
}

/// `(nu, rho, theta)`: zero probabilities, positive-mass mixing fraction and
/// DRM tilt `theta = (alpha, beta')'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBundle {
    pub nu: [f64; 2],
    pub rho: f64,
    pub theta: Vec<f64>,
}

fn strictly_inside(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

impl ParamBundle {
    /// Validated constructor: `nu` and `rho` must lie strictly inside (0, 1).
    pub fn new(nu: [f64; 2], rho: f64, theta: Vec<f64>) -> Result<Self> {
        let bundle = Self { nu, rho, theta };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &v) in self.nu.iter().enumerate() {
            if !strictly_inside(v) {
                return Err(Error::BoundaryNu(i));
            }
        }
        if !strictly_inside(self.rho) {
            return Err(Error::Domain(format!("rho = {} is not inside (0, 1)", self.rho)));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("theta has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn check_basis(&self, basis: &BasisFunction) -> Result<()> {
        if self.theta.len() != basis.dim() + 1 {
            return Err(Error::DimensionMismatch {
                expected: basis.dim() + 1,
                found: self.theta.len(),
            });
        }
        Ok(())
    }

    /// `theta' Q(x)` for a precomputed `Q(x)`.
    #[inline]
    pub fn linear_predictor(&self, q_aug: &[f64]) -> f64 {
        self.theta.iter().zip(q_aug).map(|(t, q)| t * q).sum()
    }

    /// `omega(x) = exp{theta' Q(x)}`.
    #[inline]
    pub fn omega(&self, q_aug: &[f64]) -> f64 {
        self.linear_predictor(q_aug).exp()
    }

    /// `h(x) = 1 + rho {omega(x) - 1}`.
    #[inline]
    pub fn h(&self, q_aug: &[f64]) -> f64 {
        1.0 + self.rho * self.linear_predictor(q_aug).exp_m1()
    }

    /// `(h0(x), h1(x))`, which always sum to one.
    #[inline]
    pub fn h_pair(&self, q_aug: &[f64]) -> (f64, f64) {
        mix_weights(self.linear_predictor(q_aug), self.rho)
    }

    /// `Delta = w (1 - nu_0) + (1 - w)(1 - nu_1)`.
    pub fn delta(&self, w: f64) -> f64 {
        w * (1.0 - self.nu[0]) + (1.0 - w) * (1.0 - self.nu[1])
    }
}
