//! Maximum empirical likelihood fit: closed-form `nu-hat`, Newton ascent on
//! `ell_1` for `theta-hat`, then the weights and the two baseline CDFs.

use nalgebra::{Cholesky, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{ell1_design, Design, LikelihoodEval};
use crate::model::{BasisFunction, ParamBundle, TwoSampleData};
use crate::numeric::{log_mix, mix_weights, CompensatedSum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Sup-norm tolerance on the gradient.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Euclidean bound on `theta` beyond which a stalled ascent is reported
    /// as suspected separation.
    pub separation_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            max_iter: 200,
            separation_bound: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub theta: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub steepest_steps: usize,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const MAX_SHIFTS: usize = 12;

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// Solves `(-H) d = g`, shifting the diagonal when the factorization fails.
fn newton_direction(eval: &LikelihoodEval) -> Option<DVector<f64>> {
    let neg_h = -&eval.hessian;
    if let Some(ch) = Cholesky::new(neg_h.clone()) {
        return Some(ch.solve(&eval.gradient));
    }
    let scale = neg_h.norm().max(f64::MIN_POSITIVE);
    let mut shift = 1e-8 * scale;
    for _ in 0..MAX_SHIFTS {
        let mut m = neg_h.clone();
        for k in 0..m.nrows() {
            m[(k, k)] += shift;
        }
        if let Some(ch) = Cholesky::new(m) {
            return Some(ch.solve(&eval.gradient));
        }
        shift *= 10.0;
    }
    None
}

/// Backtracking line search along `dir`. Returns the accepted point.
fn armijo<F>(
    objective: &mut F,
    theta: &[f64],
    eval: &LikelihoodEval,
    dir: &DVector<f64>,
) -> Option<(Vec<f64>, LikelihoodEval)>
where
    F: FnMut(&[f64]) -> Result<LikelihoodEval>,
{
    let slope = eval.gradient.dot(dir);
    // Rounding slack so steps inside the noise floor near the optimum still
    // count; the gradient test decides convergence.
    let slack = 8.0 * f64::EPSILON * (1.0 + eval.value.abs());
    let mut s = 1.0;
    for _ in 0..MAX_HALVINGS {
        let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + s * d).collect();
        match objective(&cand) {
            Ok(e) if e.value.is_finite() && e.value >= eval.value + ARMIJO_C * s * slope - slack => {
                return Some((cand, e));
            }
            Ok(_) | Err(Error::OverflowGuard(_)) => {}
            Err(_) => return None,
        }
        s *= 0.5;
    }
    None
}

/// Newton ascent with Armijo backtracking; falls back to steepest ascent when
/// the Newton system cannot be solved or does not give an ascent direction.
pub fn newton_ascend<F>(mut objective: F, theta0: &[f64], opts: &SolverOptions) -> Result<NewtonOutcome>
where
    F: FnMut(&[f64]) -> Result<LikelihoodEval>,
{
    let mut theta = theta0.to_vec();
    let mut eval = objective(&theta)?;
    let mut steepest_steps = 0;
    let mut last_norm = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        let g_norm = sup_norm(&eval.gradient);
        if !g_norm.is_finite() || !eval.value.is_finite() {
            return Err(Error::Domain("objective is not finite".into()));
        }
        let theta_norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        // A vanishing gradient far out means the likelihood is flat along a
        // separating direction rather than at an interior maximum.
        if g_norm <= opts.grad_tol && theta_norm > opts.separation_bound {
            return Err(Error::SeparationSuspected {
                theta_norm,
                bound: opts.separation_bound,
            });
        }
        if g_norm <= opts.grad_tol {
            return Ok(NewtonOutcome {
                theta,
                value: eval.value,
                iterations: iter,
                grad_norm: g_norm,
                steepest_steps,
            });
        }
        if theta_norm > opts.separation_bound && g_norm >= 0.5 * last_norm {
            return Err(Error::SeparationSuspected {
                theta_norm,
                bound: opts.separation_bound,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        last_norm = g_norm;
        let newton = newton_direction(&eval).filter(|d| eval.gradient.dot(d) > 0.0);
        let step = newton
            .as_ref()
            .and_then(|d| armijo(&mut objective, &theta, &eval, d))
            .or_else(|| {
                steepest_steps += 1;
                armijo(&mut objective, &theta, &eval, &eval.gradient)
            });
        match step {
            Some((t, e)) => {
                theta = t;
                eval = e;
            }
            None => break,
        }
    }
    let grad_norm = sup_norm(&eval.gradient);
    let theta_norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
    if theta_norm > opts.separation_bound {
        return Err(Error::SeparationSuspected {
            theta_norm,
            bound: opts.separation_bound,
        });
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        grad_norm,
        best: theta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub steepest_steps: usize,
    /// `sum p - 1`.
    pub residual_mass: f64,
    /// `sum p omega - 1`.
    pub residual_tilted_mass: f64,
    /// Sample whose zero proportion is 0 or 1, if any.
    pub boundary: Option<usize>,
    pub warnings: Vec<String>,
}

/// The fitted model. `bundle.nu` may sit on the boundary when
/// `diagnostics.boundary` is set; variance routines refuse such fits.
#[derive(Debug, Clone)]
pub struct DrmFit {
    pub bundle: ParamBundle,
    /// `p-hat_ij`, pooled order (sample 0 first).
    pub weights: Vec<f64>,
    /// `omega(X_ij; theta-hat)`, pooled order.
    pub omegas: Vec<f64>,
    /// Linear predictors `theta-hat' Q(X_ij)`.
    pub linear: Vec<f64>,
    pub g0_jumps: Vec<(f64, f64)>,
    pub g1_jumps: Vec<(f64, f64)>,
    pub diagnostics: FitDiagnostics,
    pub basis: BasisFunction,
    design: Design,
    sizes: [usize; 2],
}

impl DrmFit {
    pub fn design(&self) -> &Design {
        &self.design
    }

    /// `(n_0, n_1)`.
    pub fn sizes(&self) -> [usize; 2] {
        self.sizes
    }

    pub fn n(&self) -> usize {
        self.sizes[0] + self.sizes[1]
    }

    pub fn w(&self) -> f64 {
        self.sizes[0] as f64 / self.n() as f64
    }

    /// `Delta-hat = w (1 - nu_0) + (1 - w)(1 - nu_1)`.
    pub fn delta(&self) -> f64 {
        self.bundle.delta(self.w())
    }

    /// Error if either `nu-hat` is on the boundary.
    pub fn require_interior(&self) -> Result<()> {
        match self.diagnostics.boundary {
            Some(i) => Err(Error::BoundaryNu(i)),
            None => Ok(()),
        }
    }

    pub fn cdf0(&self, x: f64) -> f64 {
        step_cdf(&self.g0_jumps, x)
    }

    pub fn cdf1(&self, x: f64) -> f64 {
        step_cdf(&self.g1_jumps, x)
    }
}

fn step_cdf(jumps: &[(f64, f64)], x: f64) -> f64 {
    let k = jumps.partition_point(|(y, _)| *y <= x);
    jumps[..k].iter().map(|(_, m)| m).sum::<f64>().min(1.0)
}

fn merged_jumps(xs: &[f64], masses: impl Iterator<Item = f64>) -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(masses).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
    for (x, m) in pairs {
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 += m,
            _ => out.push((x, m)),
        }
    }
    out
}

/// Fits the model with `theta` started at zero.
pub fn fit(data: &TwoSampleData, basis: &BasisFunction, opts: &SolverOptions) -> Result<DrmFit> {
    let design = Design::new(data, basis)?;
    let rho = data.rho_hat();
    let start = vec![0.0; design.width()];
    let out = newton_ascend(|t| ell1_design(&design, rho, t), &start, opts)?;

    let nu = [data.zero_fraction(0), data.zero_fraction(1)];
    let boundary = (0..2).find(|&i| data.zeros(i) == 0 || data.zeros(i) == data.n(i));
    let mut warnings = data.warnings();
    if let Some(i) = boundary {
        warnings.push(format!(
            "sample {i} has zero proportion {}; variance formulas are unavailable",
            nu[i]
        ));
    }
    let bundle = ParamBundle {
        nu,
        rho,
        theta: out.theta,
    };

    let big_n = design.len() as f64;
    let linear = design.linear_predictors(&bundle.theta)?;
    let weights: Vec<f64> = linear.iter().map(|&t| (-log_mix(t, rho)).exp() / big_n).collect();
    let omegas: Vec<f64> = linear.iter().map(|t| t.exp()).collect();
    // p omega = h1 / (rho N), which stays finite where omega is huge.
    let tilted: Vec<f64> = linear.iter().map(|&t| mix_weights(t, rho).1 / (rho * big_n)).collect();

    let mass: CompensatedSum = weights.iter().copied().collect();
    let tilted_mass: CompensatedSum = tilted.iter().copied().collect();

    let g0_jumps = merged_jumps(design.xs(), weights.iter().copied());
    let g1_jumps = merged_jumps(design.xs(), tilted.iter().copied());

    Ok(DrmFit {
        diagnostics: FitDiagnostics {
            iterations: out.iterations,
            grad_norm: out.grad_norm,
            converged: true,
            steepest_steps: out.steepest_steps,
            residual_mass: mass.value() - 1.0,
            residual_tilted_mass: tilted_mass.value() - 1.0,
            boundary,
            warnings,
        },
        bundle,
        weights,
        omegas,
        linear,
        g0_jumps,
        g1_jumps,
        basis: basis.clone(),
        design,
        sizes: [data.n(0), data.n(1)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::ell1_dual;
    use crate::model::{load_two_sample, make_basis, BasisKind};
    use nalgebra::DMatrix;

    #[test]
    fn quadratic_converges_in_one_step() {
        let c = [1.5, -0.25, 3.0];
        let obj = |t: &[f64]| {
            let d = DVector::from_iterator(3, t.iter().zip(&c).map(|(a, b)| a - b));
            Ok(LikelihoodEval {
                value: -d.norm_squared(),
                gradient: -2.0 * &d,
                hessian: DMatrix::identity(3, 3) * -2.0,
            })
        };
        let out = newton_ascend(obj, &[0.0; 3], &SolverOptions::default()).unwrap();
        assert_eq!(out.iterations, 1);
        for k in 0..3 {
            assert!((out.theta[k] - c[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn steepest_fallback_on_unusable_hessian() {
        let obj = |t: &[f64]| {
            Ok(LikelihoodEval {
                value: -(t[0] - 1.0).powi(2),
                gradient: DVector::from_element(1, -2.0 * (t[0] - 1.0)),
                hessian: DMatrix::from_element(1, 1, f64::NAN),
            })
        };
        let opts = SolverOptions {
            grad_tol: 1e-8,
            ..Default::default()
        };
        let out = newton_ascend(obj, &[0.0], &opts).unwrap();
        assert!((out.theta[0] - 1.0).abs() < 1e-8);
        assert!(out.steepest_steps > 0);
    }

    #[test]
    fn wrong_sign_hessian_is_shifted() {
        let obj = |t: &[f64]| {
            Ok(LikelihoodEval {
                value: -(t[0] - 1.0).powi(2),
                gradient: DVector::from_element(1, -2.0 * (t[0] - 1.0)),
                hessian: DMatrix::from_element(1, 1, 2.0),
            })
        };
        let opts = SolverOptions {
            grad_tol: 1e-8,
            ..Default::default()
        };
        let out = newton_ascend(obj, &[0.0], &opts).unwrap();
        assert!((out.theta[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn non_convergence_reports_best() {
        let obj = |t: &[f64]| {
            Ok(LikelihoodEval {
                value: t[0],
                gradient: DVector::from_element(1, 1.0),
                hessian: DMatrix::from_element(1, 1, -1.0),
            })
        };
        let opts = SolverOptions {
            max_iter: 3,
            separation_bound: 1e9,
            ..Default::default()
        };
        match newton_ascend(obj, &[0.0], &opts) {
            Err(Error::NonConvergence { iterations, best, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(best, vec![3.0]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn symmetric_data_fits_at_origin() {
        let data = load_two_sample(&[0.0, 0.7, 1.9, 4.2], &[4.2, 0.0, 0.7, 1.9], 0.0).unwrap();
        let basis = make_basis(BasisKind::LogAndIdentity).unwrap();
        let f = fit(&data, &basis, &SolverOptions::default()).unwrap();
        assert_eq!(f.diagnostics.iterations, 0);
        assert!(f.bundle.theta.iter().all(|t| *t == 0.0));
        assert!(f.weights.iter().all(|p| (p - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn mice_zero_layout() {
        let mut raw0 = vec![0.0; 6];
        raw0.extend((0..38).map(|k| 1.0 + k as f64 * 0.37));
        let mut raw1 = vec![0.0; 20];
        raw1.extend((0..41).map(|k| 0.5 + k as f64 * 0.29));
        let data = load_two_sample(&raw0, &raw1, 0.0).unwrap();
        let f = fit(&data, &make_basis(BasisKind::Log).unwrap(), &SolverOptions::default()).unwrap();
        assert_eq!(f.bundle.nu, [6.0 / 44.0, 20.0 / 61.0]);
        assert!(f.require_interior().is_ok());
    }

    #[test]
    fn boundary_fit_is_flagged() {
        let data = load_two_sample(&[1.0, 2.0, 0.5, 3.5], &[0.0, 2.0, 3.0, 0.8, 1.7], 0.0).unwrap();
        let f = fit(&data, &make_basis(BasisKind::Log).unwrap(), &SolverOptions::default()).unwrap();
        assert_eq!(f.diagnostics.boundary, Some(0));
        assert_eq!(f.require_interior(), Err(Error::BoundaryNu(0)));
    }

    #[test]
    fn constraints_cdfs_and_ascent() {
        let data = load_two_sample(
            &[0.0, 0.4, 1.3, 2.2, 0.9, 0.0, 3.3],
            &[0.0, 1.1, 2.5, 4.0, 0.0, 6.1, 2.0, 0.7],
            0.0,
        )
        .unwrap();
        let basis = make_basis(BasisKind::Log).unwrap();
        let f = fit(&data, &basis, &SolverOptions::default()).unwrap();
        assert!(f.diagnostics.residual_mass.abs() <= 1e-12);
        assert!(f.diagnostics.residual_tilted_mass.abs() <= 1e-12);
        assert!(f.weights.iter().all(|p| *p > 0.0));
        for (j, x) in f.design().xs().iter().enumerate() {
            let q = basis.augmented(*x);
            let want = f.weights[j] * f.bundle.omega(&q);
            let got = f.g1_jumps.iter().find(|(y, _)| y == x).unwrap().1;
            assert!((got - want).abs() < 1e-15);
        }
        let mut prev = 0.0;
        for (x, _) in &f.g0_jumps {
            let c = f.cdf0(*x);
            assert!(c >= prev);
            prev = c;
        }
        assert!((f.cdf0(6.1) - 1.0).abs() < 1e-12);
        assert!((f.cdf1(6.1) - 1.0).abs() < 1e-12);
        assert_eq!(f.cdf0(0.1), 0.0);
        let at_zero = ell1_dual(&data, &basis, &[0.0, 0.0]).unwrap().value;
        let at_fit = ell1_dual(&data, &basis, &f.bundle.theta).unwrap().value;
        assert!(at_fit >= at_zero);
        let again = fit(&data, &basis, &SolverOptions::default()).unwrap();
        assert_eq!(again.bundle, f.bundle);
        assert_eq!(again.weights, f.weights);
    }

    #[test]
    fn separated_samples_are_flagged() {
        let data = load_two_sample(&[0.0, 1.0, 1.1, 1.2], &[0.0, 1.3, 1.4, 1.5], 0.0).unwrap();
        let r = fit(&data, &make_basis(BasisKind::Log).unwrap(), &SolverOptions::default());
        assert!(
            matches!(r, Err(Error::SeparationSuspected { .. }) | Err(Error::OverflowGuard(_))),
            "{r:?}"
        );
    }
}
