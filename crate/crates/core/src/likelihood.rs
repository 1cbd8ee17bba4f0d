//! Binomial log-likelihood, dual empirical log-likelihood and the expanded
//! H-function over `eta = (nu_0, nu_1, rho, theta)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{BasisFunction, ParamBundle, TwoSampleData};
use crate::numeric::{log_mix, mix_weights, CompensatedSum, MAX_EXP_ARG};

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Augmented basis rows `Q(X_ij)` for the pooled positives, sample 0 first.
#[derive(Debug, Clone)]
pub struct Design {
    width: usize,
    n_first: usize,
    rows: Vec<f64>,
    xs: Vec<f64>,
}

impl Design {
    pub fn new(data: &TwoSampleData, basis: &BasisFunction) -> Result<Self> {
        let width = basis.dim() + 1;
        let mut rows = Vec::with_capacity(width * data.pooled_positive_count());
        let mut xs = Vec::with_capacity(data.pooled_positive_count());
        for (_, x) in data.pooled() {
            let q = basis.augmented(x);
            if q.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "basis '{}' is not finite at x = {x}",
                    basis.label()
                )));
            }
            rows.extend_from_slice(&q);
            xs.push(x);
        }
        Ok(Self {
            width,
            n_first: data.n_positive(0),
            rows,
            xs,
        })
    }

    /// `d + 1`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.width..(j + 1) * self.width]
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        self.xs[j]
    }

    /// Sample membership of pooled index `j`.
    #[inline]
    pub fn sample(&self, j: usize) -> usize {
        usize::from(j >= self.n_first)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    /// Linear predictors `theta' Q(X_ij)`, rejecting values whose exponential
    /// is not representable.
    pub fn linear_predictors(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.width {
            return Err(Error::DimensionMismatch {
                expected: self.width,
                found: theta.len(),
            });
        }
        (0..self.len())
            .map(|j| {
                let t: f64 = self.row(j).iter().zip(theta).map(|(q, b)| q * b).sum();
                if !t.is_finite() || t > MAX_EXP_ARG {
                    Err(Error::OverflowGuard(t))
                } else {
                    Ok(t)
                }
            })
            .collect()
    }
}

fn check_nu(nu: [f64; 2]) -> Result<()> {
    for (i, v) in nu.iter().enumerate() {
        if !(*v > 0.0 && *v < 1.0) {
            return Err(Error::Domain(format!("nu_{i} = {v} is not inside (0, 1)")));
        }
    }
    Ok(())
}

/// Binomial log-likelihood of the zero counts.
pub fn ell0(data: &TwoSampleData, nu: [f64; 2]) -> Result<LikelihoodEval> {
    check_nu(nu)?;
    let mut value = CompensatedSum::new();
    let mut gradient = DVector::zeros(2);
    let mut hessian = DMatrix::zeros(2, 2);
    for i in 0..2 {
        let z = data.zeros(i) as f64;
        let p = data.n_positive(i) as f64;
        let v = nu[i];
        value.add(z * v.ln());
        value.add(p * (-v).ln_1p());
        gradient[i] = z / v - p / (1.0 - v);
        hessian[(i, i)] = -z / (v * v) - p / ((1.0 - v) * (1.0 - v));
    }
    Ok(LikelihoodEval {
        value: value.value(),
        gradient,
        hessian,
    })
}

/// Dual empirical log-likelihood `ell_1(theta)` with `rho` fixed at `rho-hat`.
pub fn ell1_dual(data: &TwoSampleData, basis: &BasisFunction, theta: &[f64]) -> Result<LikelihoodEval> {
    let design = Design::new(data, basis)?;
    ell1_design(&design, data.rho_hat(), theta)
}

/// `ell_1` on a precomputed design.
pub fn ell1_design(design: &Design, rho: f64, theta: &[f64]) -> Result<LikelihoodEval> {
    let ts = design.linear_predictors(theta)?;
    let width = design.width();
    let mut value = CompensatedSum::new();
    // Sigma_1 Q - Sigma h1 Q, split as Sigma_1 h0 Q - Sigma_0 h1 Q.
    let mut up = vec![CompensatedSum::new(); width];
    let mut down = vec![CompensatedSum::new(); width];
    let mut hessian = DMatrix::zeros(width, width);
    for (j, &t) in ts.iter().enumerate() {
        value.add(-log_mix(t, rho));
        let (h0, h1) = mix_weights(t, rho);
        let q = design.row(j);
        if design.sample(j) == 1 {
            value.add(t);
            for (acc, qa) in up.iter_mut().zip(q) {
                acc.add(h0 * qa);
            }
        } else {
            for (acc, qa) in down.iter_mut().zip(q) {
                acc.add(h1 * qa);
            }
        }
        let c = h0 * h1;
        for a in 0..width {
            for b in 0..=a {
                hessian[(a, b)] -= c * q[a] * q[b];
            }
        }
    }
    symmetrize_lower(&mut hessian);
    let gradient = DVector::from_fn(width, |a, _| up[a].value() - down[a].value());
    Ok(LikelihoodEval {
        value: value.value(),
        gradient,
        hessian,
    })
}

fn symmetrize_lower(m: &mut DMatrix<f64>) {
    for a in 0..m.nrows() {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
}

/// Blocks of the Hessian of H, indexed as `(nu_0, nu_1, rho, theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HSecondDerivatives {
    pub nu_nu: DMatrix<f64>,
    pub nu_rho: DVector<f64>,
    pub nu_theta: DMatrix<f64>,
    pub rho_rho: f64,
    pub theta_rho: DVector<f64>,
    pub theta_theta: DMatrix<f64>,
}

impl HSecondDerivatives {
    /// The full `(3 + d + 1)`-square matrix.
    pub fn assemble(&self) -> DMatrix<f64> {
        let w = self.theta_theta.nrows();
        let dim = 3 + w;
        let mut m = DMatrix::zeros(dim, dim);
        m.view_mut((0, 0), (2, 2)).copy_from(&self.nu_nu);
        for i in 0..2 {
            m[(i, 2)] = self.nu_rho[i];
            m[(2, i)] = self.nu_rho[i];
            for k in 0..w {
                m[(i, 3 + k)] = self.nu_theta[(i, k)];
                m[(3 + k, i)] = self.nu_theta[(i, k)];
            }
        }
        m[(2, 2)] = self.rho_rho;
        for k in 0..w {
            m[(2, 3 + k)] = self.theta_rho[k];
            m[(3 + k, 2)] = self.theta_rho[k];
        }
        m.view_mut((3, 3), (w, w)).copy_from(&self.theta_theta);
        m
    }
}

/// Per-point kernels needed by the rho derivatives, evaluated without
/// forming `omega` itself: `(omega - 1)/h` and `omega/h^2`.
#[inline]
fn rho_kernels(t: f64, rho: f64) -> (f64, f64) {
    let (h0, h1) = mix_weights(t, rho);
    let a = h1 / rho;
    let b = h0 / (1.0 - rho);
    (a - b, a * b)
}

/// Value and gradient of the expanded H-function.
pub fn h_function(data: &TwoSampleData, basis: &BasisFunction, bundle: &ParamBundle) -> Result<LikelihoodEval> {
    bundle.check_basis(basis)?;
    let design = Design::new(data, basis)?;
    let ts = design.linear_predictors(&bundle.theta)?;
    let l0 = ell0(data, bundle.nu)?;
    let rho = bundle.rho;
    let w = design.width();
    let mut value = CompensatedSum::new();
    value.add(l0.value);
    let l1 = ell1_design(&design, rho, &bundle.theta)?;
    value.add(l1.value);
    let mut grad = DVector::zeros(3 + w);
    grad[0] = l0.gradient[0];
    grad[1] = l0.gradient[1];
    let mut g_rho = CompensatedSum::new();
    for &t in &ts {
        g_rho.add(-rho_kernels(t, rho).0);
    }
    grad[2] = g_rho.value();
    grad.rows_mut(3, w).copy_from(&l1.gradient);
    let hessian = h_second_derivatives(data, basis, bundle)?.assemble();
    Ok(LikelihoodEval {
        value: value.value(),
        gradient: grad,
        hessian,
    })
}

/// All second-derivative blocks of H at `bundle`.
pub fn h_second_derivatives(
    data: &TwoSampleData,
    basis: &BasisFunction,
    bundle: &ParamBundle,
) -> Result<HSecondDerivatives> {
    bundle.check_basis(basis)?;
    let design = Design::new(data, basis)?;
    let l1 = ell1_design(&design, bundle.rho, &bundle.theta)?;
    let ts = design.linear_predictors(&bundle.theta)?;
    let w = design.width();
    let rho = bundle.rho;
    let mut rho_rho = CompensatedSum::new();
    let mut theta_rho = DVector::zeros(w);
    for (j, &t) in ts.iter().enumerate() {
        let (r, s) = rho_kernels(t, rho);
        rho_rho.add(r * r);
        for (k, q) in design.row(j).iter().enumerate() {
            theta_rho[k] -= s * q;
        }
    }
    Ok(HSecondDerivatives {
        nu_nu: ell0(data, bundle.nu)?.hessian,
        nu_rho: DVector::zeros(2),
        nu_theta: DMatrix::zeros(2, w),
        rho_rho: rho_rho.value(),
        theta_rho,
        theta_theta: l1.hessian,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_two_sample, make_basis, BasisKind};
    use crate::numdiff;
    use proptest::prelude::*;

    fn toy() -> TwoSampleData {
        load_two_sample(&[0.0, 0.5, 1.2, 2.0, 0.0], &[0.0, 0.8, 3.1, 1.7, 2.2], 0.0).unwrap()
    }

    #[test]
    fn ell0_symmetric_binomial() {
        let data = load_two_sample(
            &[0.0; 5].iter().chain(&[1.0; 5]).copied().collect::<Vec<_>>(),
            &[1.0],
            0.0,
        )
        .unwrap();
        let v = ell0(&data, [0.5, 0.5]).unwrap().value;
        assert!((v - (10.0 * 0.5f64.ln() + 0.5f64.ln())).abs() < 1e-12);
        assert!((10.0 * 0.5f64.ln() + 6.9315).abs() < 1e-4);
    }

    #[test]
    fn ell0_gradient_vanishes_at_mle() {
        let data = toy();
        let nu = [data.zero_fraction(0), data.zero_fraction(1)];
        let g = ell0(&data, nu).unwrap().gradient;
        assert!(g.amax() < 1e-12);
        assert!(ell0(&data, [0.0, 0.5]).is_err());
    }

    #[test]
    fn ell0_maximized_at_zero_fraction_on_grid() {
        let data = toy();
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for a in 1..1000 {
            for b in (1..1000).step_by(7) {
                let nu = [a as f64 / 1000.0, b as f64 / 1000.0];
                let v = ell0(&data, nu).unwrap().value;
                if v > best.0 {
                    best = (v, nu[0], nu[1]);
                }
            }
        }
        assert!((best.1 - 0.4).abs() <= 1e-3);
        assert!((best.2 - 0.2).abs() <= 7e-3);
    }

    #[test]
    fn ell1_zero_at_origin_and_symmetric_gradient() {
        let data = load_two_sample(&[0.0, 1.0, 2.0, 3.0], &[0.0, 3.0, 1.0, 2.0], 0.0).unwrap();
        let basis = make_basis(BasisKind::LogAndIdentity).unwrap();
        let e = ell1_dual(&data, &basis, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.gradient.amax(), 0.0);
    }

    #[test]
    fn ell1_overflow_is_reported() {
        let data = toy();
        let basis = make_basis(BasisKind::Identity).unwrap();
        assert!(matches!(
            ell1_dual(&data, &basis, &[800.0, 0.0]),
            Err(Error::OverflowGuard(_))
        ));
    }

    #[test]
    fn nu_block_at_mle_is_binomial_information() {
        let data = toy();
        let basis = make_basis(BasisKind::Log).unwrap();
        let nu = [data.zero_fraction(0), data.zero_fraction(1)];
        let bundle = ParamBundle::new(nu, data.rho_hat(), vec![0.1, -0.2]).unwrap();
        let blocks = h_second_derivatives(&data, &basis, &bundle).unwrap();
        for i in 0..2 {
            let want = -(data.n(i) as f64) / (nu[i] * (1.0 - nu[i]));
            assert!((blocks.nu_nu[(i, i)] - want).abs() < 1e-10 * want.abs());
        }
        assert_eq!(blocks.nu_nu[(0, 1)], 0.0);
        assert!(blocks.nu_rho.iter().all(|v| *v == 0.0));
        assert!(blocks.nu_theta.iter().all(|v| *v == 0.0));
    }

    fn eta_of(b: &ParamBundle) -> Vec<f64> {
        let mut eta = vec![b.nu[0], b.nu[1], b.rho];
        eta.extend(&b.theta);
        eta
    }

    fn bundle_of(eta: &[f64]) -> ParamBundle {
        ParamBundle {
            nu: [eta[0], eta[1]],
            rho: eta[2],
            theta: eta[3..].to_vec(),
        }
    }

    #[test]
    fn h_blocks_match_finite_differences() {
        let data = toy();
        let basis = make_basis(BasisKind::LogAndIdentity).unwrap();
        let bundle = ParamBundle::new([0.35, 0.25], 0.45, vec![0.2, -0.3, 0.4]).unwrap();
        let eval = h_function(&data, &basis, &bundle).unwrap();
        let eta = eta_of(&bundle);
        let f = |e: &[f64]| h_function(&data, &basis, &bundle_of(e)).unwrap().value;
        let g = numdiff::gradient(f, &eta);
        for k in 0..eta.len() {
            assert!((g[k] - eval.gradient[k]).abs() <= 1e-7 * (1.0 + g[k].abs()), "k={k}");
        }
        let grad = |e: &[f64]| {
            h_function(&data, &basis, &bundle_of(e))
                .unwrap()
                .gradient
                .iter()
                .copied()
                .collect::<Vec<_>>()
        };
        let jac = numdiff::jacobian(grad, &eta);
        for a in 0..eta.len() {
            for b in 0..eta.len() {
                let want = jac[(a, b)];
                assert!(
                    (want - eval.hessian[(a, b)]).abs() <= 1e-6 * (1.0 + want.abs()),
                    "({a},{b}) {want} vs {}",
                    eval.hessian[(a, b)]
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ell1_concave_along_segments(
            a in proptest::collection::vec(-2.0f64..2.0, 2),
            b in proptest::collection::vec(-2.0f64..2.0, 2),
            xs in proptest::collection::vec(0.05f64..8.0, 4..20),
        ) {
            let mid = xs.len() / 2;
            let data = load_two_sample(&xs[..mid], &xs[mid..], 0.0).unwrap();
            let basis = make_basis(BasisKind::Log).unwrap();
            let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let fa = ell1_dual(&data, &basis, &a).unwrap().value;
            let fb = ell1_dual(&data, &basis, &b).unwrap().value;
            let fm = ell1_dual(&data, &basis, &m).unwrap().value;
            prop_assert!(fm >= 0.5 * (fa + fb) - 1e-9 * (1.0 + fa.abs() + fb.abs()));
            let e = ell1_dual(&data, &basis, &a).unwrap();
            let asym = (&e.hessian - e.hessian.transpose()).amax();
            prop_assert!(asym <= 1e-10 * (1.0 + e.hessian.amax()));
        }
    }
}
