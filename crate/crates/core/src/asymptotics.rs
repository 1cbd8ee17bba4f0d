//! Plug-in estimates of the asymptotic covariances of `eta-hat`, `psi-hat`
//! and `g(psi-hat)`, plus the nonparametric/semiparametric comparison.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::functionals::{psi_hat, SmoothMap, TwoSampleFunctional, UFunctional};
use crate::numeric::{mix_weights, CompensatedSum};
use crate::solver::DrmFit;

/// Condition number beyond which a matrix is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// `sum p-hat_ij f(X_ij)`, the plug-in for `E_0 f(X)`.
pub fn empirical_e0<F>(fit: &DrmFit, f: F) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Vec<f64>,
{
    let xs = fit.design().xs();
    let mut acc: Vec<CompensatedSum> = Vec::new();
    for (x, p) in xs.iter().zip(&fit.weights) {
        let v = f(*x);
        if acc.is_empty() {
            acc = vec![CompensatedSum::new(); v.len()];
        } else if v.len() != acc.len() {
            return Err(Error::DimensionMismatch {
                expected: acc.len(),
                found: v.len(),
            });
        }
        for (a, vk) in acc.iter_mut().zip(&v) {
            if !vk.is_finite() {
                return Err(Error::Domain(format!("E_0 integrand is {vk} at x = {x}")));
            }
            a.add(p * vk);
        }
    }
    Ok(acc.iter().map(|a| a.value()).collect())
}

/// Per-point kernels at the fitted parameters.
struct Kernels {
    /// `h1(X_ij)`.
    h1: Vec<f64>,
    /// `1 / h(X_ij)`.
    inv_h: Vec<f64>,
}

fn kernels(fit: &DrmFit) -> Kernels {
    let rho = fit.bundle.rho;
    let (h1, inv_h) = fit
        .linear
        .iter()
        .map(|&t| {
            let (h0, h1) = mix_weights(t, rho);
            (h1, h0 / (1.0 - rho))
        })
        .unzip();
    Kernels { h1, inv_h }
}

fn condition_of(m: &DMatrix<f64>) -> (SymmetricEigen<f64, nalgebra::Dyn>, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    (eig, cond)
}

/// Inverse of a symmetric positive definite matrix, or `None` when the
/// condition number exceeds [`SINGULAR_CONDITION`]. Also returns the condition.
pub fn spd_inverse(m: &DMatrix<f64>) -> (Option<DMatrix<f64>>, f64) {
    let (eig, cond) = condition_of(m);
    if !(cond <= SINGULAR_CONDITION) {
        return (None, cond);
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    (Some(symmetrize(inv)), cond)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `A_nu = diag{w / (nu_0 (1 - nu_0)), (1 - w) / (nu_1 (1 - nu_1))}`.
pub fn a_nu(fit: &DrmFit) -> DMatrix<f64> {
    let w = fit.w();
    let nu = fit.bundle.nu;
    DMatrix::from_diagonal(&DVector::from_vec(vec![
        w / (nu[0] * (1.0 - nu[0])),
        (1.0 - w) / (nu[1] * (1.0 - nu[1])),
    ]))
}

/// `A_theta = Delta (1 - rho) E_0{h1 Q Q'}`.
pub fn a_theta(fit: &DrmFit) -> DMatrix<f64> {
    let k = kernels(fit);
    let design = fit.design();
    let width = design.width();
    let mut m = DMatrix::zeros(width, width);
    for j in 0..design.len() {
        let q = design.row(j);
        let c = fit.weights[j] * k.h1[j];
        for a in 0..width {
            for b in 0..=a {
                m[(a, b)] += c * q[a] * q[b];
            }
        }
    }
    for a in 0..width {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
    m * (fit.delta() * (1.0 - fit.bundle.rho))
}

fn a_theta_inverse(fit: &DrmFit) -> Result<DMatrix<f64>> {
    match spd_inverse(&a_theta(fit)) {
        (Some(inv), _) => Ok(inv),
        (None, condition) => Err(Error::SingularAtheta { condition }),
    }
}

/// `W = ((1 - nu_0)^{-1}, -(1 - nu_1)^{-1})`.
fn w_row(fit: &DrmFit) -> DVector<f64> {
    let nu = fit.bundle.nu;
    DVector::from_vec(vec![1.0 / (1.0 - nu[0]), -1.0 / (1.0 - nu[1])])
}

/// `Lambda-hat`, indexed `(nu_0, nu_1, rho, theta)`.
pub fn lambda_hat(fit: &DrmFit) -> Result<DMatrix<f64>> {
    fit.require_interior()?;
    let width = fit.design().width();
    let dim = 3 + width;
    let nu = fit.bundle.nu;
    let rho = fit.bundle.rho;
    let delta = fit.delta();
    let rr = rho * (1.0 - rho);
    let a_nu_inv = a_nu(fit).map_diagonal(|v| 1.0 / v);
    let a_nu_inv = DMatrix::from_diagonal(&a_nu_inv);
    let cross = &a_nu_inv * w_row(fit) * rr;
    let mut lam = DMatrix::zeros(dim, dim);
    lam.view_mut((0, 0), (2, 2)).copy_from(&a_nu_inv);
    for i in 0..2 {
        lam[(i, 2)] = cross[i];
        lam[(2, i)] = cross[i];
    }
    lam[(2, 2)] = rr * (rho * nu[0] + (1.0 - rho) * nu[1]) / delta;
    let mut theta_block = a_theta_inverse(fit)?;
    theta_block[(0, 0)] -= 1.0 / (delta * rr);
    lam.view_mut((3, 3), (width, width)).copy_from(&theta_block);
    Ok(lam)
}

/// `A-hat`: minus the scaled expected Hessian of H, with every block computed
/// from its defining expectation.
pub fn a_hat(fit: &DrmFit) -> Result<DMatrix<f64>> {
    fit.require_interior()?;
    let design = fit.design();
    let width = design.width();
    let k = kernels(fit);
    let delta = fit.delta();
    let mut a_rho = CompensatedSum::new();
    let mut a_theta_rho = DVector::<f64>::zeros(width);
    for j in 0..design.len() {
        let om = fit.omegas[j];
        let p = fit.weights[j];
        a_rho.add(p * (om - 1.0) * (om - 1.0) * k.inv_h[j]);
        for (c, q) in design.row(j).iter().enumerate() {
            a_theta_rho[c] += p * om * k.inv_h[j] * q;
        }
    }
    let mut a = DMatrix::zeros(3 + width, 3 + width);
    a.view_mut((0, 0), (2, 2)).copy_from(&a_nu(fit));
    a[(2, 2)] = -delta * a_rho.value();
    for c in 0..width {
        a[(2, 3 + c)] = delta * a_theta_rho[c];
        a[(3 + c, 2)] = delta * a_theta_rho[c];
    }
    a.view_mut((3, 3), (width, width)).copy_from(&a_theta(fit));
    Ok(a)
}

/// `B-hat`: the plug-in variance of the scaled score `n^{-1/2} S_n`.
pub fn b_hat(fit: &DrmFit) -> Result<DMatrix<f64>> {
    let a = a_hat(fit)?;
    let width = fit.design().width();
    let w = fit.w();
    let rr = fit.bundle.rho * (1.0 - fit.bundle.rho);
    let s = 1.0 / w + 1.0 / (1.0 - w);
    let a_rho = -a[(2, 2)];
    let a_th = a.view((3, 3), (width, width)).into_owned();
    let a_th_e = a_th.column(0).into_owned();
    let wv = w_row(fit);
    let mut b = DMatrix::zeros(3 + width, 3 + width);
    b.view_mut((0, 0), (2, 2)).copy_from(&a.view((0, 0), (2, 2)));
    b[(2, 2)] = a_rho - s * rr * rr * a_rho * a_rho;
    for i in 0..2 {
        let v = -rr * a_rho * wv[i];
        b[(i, 2)] = v;
        b[(2, i)] = v;
        for c in 0..width {
            b[(i, 3 + c)] = wv[i] * a_th_e[c];
            b[(3 + c, i)] = wv[i] * a_th_e[c];
        }
    }
    for c in 0..width {
        let v = s * rr * a_rho * a_th_e[c];
        b[(2, 3 + c)] = v;
        b[(3 + c, 2)] = v;
    }
    let outer = &a_th_e * a_th_e.transpose() * s;
    b.view_mut((3, 3), (width, width)).copy_from(&(a_th - outer));
    Ok(b)
}

/// `(M1, M2, M3)` of sizes `p x 2`, `p`, `p x (d + 1)`.
pub fn m_matrices(fit: &DrmFit, u: &dyn UFunctional) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    fit.require_interior()?;
    Ok(moments(fit, u)?.m)
}

struct Moments {
    psi: DVector<f64>,
    /// `E_0{u u' / h}`.
    uu_h: DMatrix<f64>,
    m: (DMatrix<f64>, DVector<f64>, DMatrix<f64>),
}

fn moments(fit: &DrmFit, u: &dyn UFunctional) -> Result<Moments> {
    let design = fit.design();
    let width = design.width();
    let p = u.dim();
    let k = kernels(fit);
    let mut psi = DVector::zeros(p);
    let mut uu_h = DMatrix::zeros(p, p);
    let mut m1 = DMatrix::zeros(p, 2);
    let mut m3 = DMatrix::zeros(p, width);
    let mut e0_dalpha = DVector::zeros(p);
    for j in 0..design.len() {
        let (x, q) = (design.x(j), design.row(j));
        let pj = fit.weights[j];
        let uv = DVector::from_vec(u.value(x, q, &fit.bundle));
        if uv.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: uv.len(),
            });
        }
        let d_nu = u.d_nu(x, q, &fit.bundle);
        let d_theta = u.d_theta(x, q, &fit.bundle);
        if d_nu.shape() != (p, 2) || d_theta.shape() != (p, width) {
            return Err(Error::DimensionMismatch {
                expected: p * (2 + width),
                found: d_nu.len() + d_theta.len(),
            });
        }
        psi.axpy(pj, &uv, 1.0);
        uu_h.ger(pj * k.inv_h[j], &uv, &uv, 1.0);
        m1 += d_nu * pj;
        let qv = DVector::from_column_slice(q);
        e0_dalpha.axpy(pj, &d_theta.column(0), 1.0);
        m3 += d_theta * pj;
        m3.ger(-pj * k.h1[j], &uv, &qv, 1.0);
    }
    let m2 = e0_dalpha - &psi * fit.bundle.rho;
    Ok(Moments {
        psi,
        uu_h,
        m: (m1, m2, m3),
    })
}

/// `Gamma-hat` for `psi-hat`.
pub fn gamma_hat(fit: &DrmFit, u: &dyn UFunctional) -> Result<DMatrix<f64>> {
    fit.require_interior()?;
    let mo = moments(fit, u)?;
    let delta = fit.delta();
    let rho = fit.bundle.rho;
    let (m1, m2, m3) = &mo.m;
    let a_nu_inv = DMatrix::from_diagonal(&a_nu(fit).map_diagonal(|v| 1.0 / v));
    let a_th_inv = a_theta_inverse(fit)?;
    let g = (&mo.uu_h - &mo.psi * mo.psi.transpose()) / delta + m1 * a_nu_inv * m1.transpose()
        - m2 * m2.transpose() / (delta * rho * (1.0 - rho))
        + m3 * a_th_inv * m3.transpose();
    Ok(symmetrize(g))
}

/// `J Gamma-hat J'` with `J` the Jacobian of `g` at `psi-hat`.
pub fn gamma_g_hat(fit: &DrmFit, u: &dyn UFunctional, g: &dyn SmoothMap) -> Result<DMatrix<f64>> {
    let gamma = gamma_hat(fit, u)?;
    let psi = psi_hat(fit, u)?;
    let j = g.jacobian(&psi)?;
    if j.ncols() != gamma.nrows() {
        return Err(Error::DimensionMismatch {
            expected: gamma.nrows(),
            found: j.ncols(),
        });
    }
    Ok(symmetrize(&j * gamma * j.transpose()))
}

/// `(Gamma_non, Gamma_sem, min eigenvalue of their difference)` for
/// `psi_i = int a dF_i`.
pub fn gamma_non_and_sem<A>(fit: &DrmFit, a: A) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)>
where
    A: Fn(f64) -> Vec<f64>,
{
    fit.require_interior()?;
    let design = fit.design();
    let width = design.width();
    let k = kernels(fit);
    let nu = fit.bundle.nu;
    let w = fit.w();
    let delta = fit.delta();
    let scale = delta * (1.0 - fit.bundle.rho);
    let avals: Vec<DVector<f64>> = design.xs().iter().map(|&x| DVector::from_vec(a(x))).collect();
    let m = avals.first().map_or(0, |v| v.len());
    if avals.iter().any(|v| v.len() != m) {
        return Err(Error::InvalidInput("a(x) changes length across points".into()));
    }

    let mut e_a = DVector::zeros(m);
    let mut e_wa = DVector::zeros(m);
    let mut e_aa = DMatrix::zeros(m, m);
    let mut e_waa = DMatrix::zeros(m, m);
    let mut e_h1aq = DMatrix::zeros(m, width);
    for (j, av) in avals.iter().enumerate() {
        let p = fit.weights[j];
        let om = fit.omegas[j];
        e_a.axpy(p, av, 1.0);
        e_wa.axpy(p * om, av, 1.0);
        e_aa.ger(p, av, av, 1.0);
        e_waa.ger(p * om, av, av, 1.0);
        let qv = DVector::from_column_slice(design.row(j));
        e_h1aq.ger(p * k.h1[j], av, &qv, 1.0);
    }
    let psi0 = &e_a * (1.0 - nu[0]);
    let psi1 = &e_wa * (1.0 - nu[1]);
    let v0 = e_aa * (1.0 - nu[0]) - &psi0 * psi0.transpose();
    let v1 = e_waa * (1.0 - nu[1]) - &psi1 * psi1.transpose();
    let mut non = DMatrix::zeros(2 * m, 2 * m);
    non.view_mut((0, 0), (m, m)).copy_from(&(v0 / w));
    non.view_mut((m, m), (m, m)).copy_from(&(v1 / (1.0 - w)));
    let non = symmetrize(non);

    let proj = e_h1aq * a_theta_inverse(fit)? * scale;
    let mut gap = DMatrix::zeros(2 * m, 2 * m);
    for (j, av) in avals.iter().enumerate() {
        let qv = DVector::from_column_slice(design.row(j));
        let d = av - &proj * qv;
        let mut s = DVector::zeros(2 * m);
        s.rows_mut(0, m).copy_from(&(&d / w));
        s.rows_mut(m, m).copy_from(&(-&d / (1.0 - w)));
        gap.ger(fit.weights[j] * k.h1[j], &s, &s, 1.0);
    }
    let gap = symmetrize(gap * scale);
    let min_gap = SymmetricEigen::new(gap.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(*v));
    Ok((non.clone(), symmetrize(non - gap), min_gap))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsdCheck {
    pub min_eigenvalue: f64,
    pub psd: bool,
}

/// Diagnoses positive semidefiniteness with tolerance `-1e-8` scaled by the
/// largest entry. Never repairs.
pub fn psd_check(m: &DMatrix<f64>) -> PsdCheck {
    if m.is_empty() {
        return PsdCheck {
            min_eigenvalue: 0.0,
            psd: true,
        };
    }
    let min = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(*v));
    PsdCheck {
        min_eigenvalue: min,
        psd: min >= -1e-8 * m.amax().max(1.0),
    }
}

fn ser_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

fn ser_opt_matrix<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match m {
        Some(m) => ser_matrix(m, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceReport {
    #[serde(serialize_with = "ser_matrix")]
    pub lambda_hat: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub gamma_hat: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub gamma_g_hat: DMatrix<f64>,
    #[serde(serialize_with = "ser_opt_matrix")]
    pub gamma_non: Option<DMatrix<f64>>,
    #[serde(serialize_with = "ser_opt_matrix")]
    pub gamma_sem: Option<DMatrix<f64>>,
    pub min_eig_gap: Option<f64>,
    pub lambda_psd: PsdCheck,
    pub gamma_psd: PsdCheck,
    pub gamma_g_psd: PsdCheck,
    pub warnings: Vec<String>,
}

/// All covariance objects for a built-in two-sample functional and map.
pub fn covariance_report(fit: &DrmFit, u: &TwoSampleFunctional, g: &dyn SmoothMap) -> Result<CovarianceReport> {
    let lambda = lambda_hat(fit)?;
    let gamma = gamma_hat(fit, u)?;
    let gamma_g = gamma_g_hat(fit, u, g)?;
    let (non, sem, gap) = gamma_non_and_sem(fit, |x| u.a(x))?;
    let mut warnings = Vec::new();
    let checks = [
        ("Lambda", psd_check(&lambda)),
        ("Gamma", psd_check(&gamma)),
        ("Gamma_g", psd_check(&gamma_g)),
    ];
    for (name, c) in &checks {
        if !c.psd {
            warnings.push(format!("{name} is not PSD: min eigenvalue {:e}", c.min_eigenvalue));
        }
    }
    let [l, gm, gg] = checks.map(|c| c.1);
    Ok(CovarianceReport {
        lambda_hat: lambda,
        gamma_hat: gamma,
        gamma_g_hat: gamma_g,
        gamma_non: Some(non),
        gamma_sem: Some(sem),
        min_eig_gap: Some(gap),
        lambda_psd: l,
        gamma_psd: gm,
        gamma_g_psd: gg,
        warnings,
    })
}
