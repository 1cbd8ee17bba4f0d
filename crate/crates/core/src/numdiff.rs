//! Central finite differences. Used as the derivative fallback for custom
//! functionals and maps, and as a test oracle for the analytic ones.

use nalgebra::DMatrix;

/// Step used for coordinate `x`: `max(1e-6, 1e-6 |x|)`.
#[inline]
pub fn step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-6)
}

/// Gradient of a scalar function.
pub fn gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = step(x[k]);
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Jacobian of a vector function: rows are outputs, columns are inputs.
pub fn jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64]) -> DMatrix<f64> {
    let mut probe = x.to_vec();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let h = step(x[k]);
        probe[k] = x[k] + h;
        let up = f(&probe);
        probe[k] = x[k] - h;
        let down = f(&probe);
        probe[k] = x[k];
        cols.push(up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect());
    }
    let rows = cols.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows, x.len(), |r, c| cols[c][r])
}
