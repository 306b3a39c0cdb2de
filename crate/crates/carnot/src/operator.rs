//! Assembled operators on the Fourier truncation `T^L` of zero-mean controls.
//!
//! The truncation is ordered block by block, `k = 1..=L`; inside block `k`
//! the first `d` coordinates are the cosine coefficients `U_k`, the next `d`
//! the sine coefficients `V_k` (both with respect to the orthonormal basis
//! `cos(kt)/sqrt(pi)`, `sin(kt)/sqrt(pi)`).

use nalgebra::DMatrix;

use crate::endpoint::Control;
use crate::structure::{CarnotStructure, Covector, VerticalPoint};
use crate::Result;

/// Dimension of the truncation `T^L`.
pub fn truncation_dim(d: usize, order: usize) -> usize {
    2 * d * order
}

/// Matrix of the quadratic form `q_i` restricted to `T^L`:
/// block `k` is `(1/k) [[0, A_i/2], [-A_i/2, 0]]`.
pub fn q_form_matrix(structure: &CarnotStructure, i: usize, order: usize) -> DMatrix<f64> {
    let d = structure.horizontal_rank();
    let a = structure.matrix(i);
    let n = truncation_dim(d, order);
    let mut m = DMatrix::zeros(n, n);
    for k in 1..=order {
        let o = 2 * d * (k - 1);
        let c = 0.5 / k as f64;
        for r in 0..d {
            for s in 0..d {
                m[(o + r, o + d + s)] = c * a[(r, s)];
                m[(o + d + r, o + s)] = -c * a[(r, s)];
            }
        }
    }
    m
}

/// The stationarity operator `2 (omega Q)` on `T^L`: block `k` is
/// `(1/k) [[0, omega A], [-omega A, 0]]`, with eigenvalues
/// `+-alpha_i(omega)/k`, each of multiplicity two.
pub fn stationarity_matrix(
    structure: &CarnotStructure,
    omega: &Covector,
    order: usize,
) -> Result<DMatrix<f64>> {
    let d = structure.horizontal_rank();
    let wa = structure.omega_matrix(omega)?;
    let n = truncation_dim(d, order);
    let mut m = DMatrix::zeros(n, n);
    for k in 1..=order {
        let o = 2 * d * (k - 1);
        let c = 1.0 / k as f64;
        for r in 0..d {
            for s in 0..d {
                m[(o + r, o + d + s)] = c * wa[(r, s)];
                m[(o + d + r, o + s)] = -c * wa[(r, s)];
            }
        }
    }
    Ok(m)
}

/// Hessian of `J - omega(q)` at a critical point, restricted to `T^L`:
/// the identity minus the stationarity operator.
pub fn hessian_matrix(
    structure: &CarnotStructure,
    omega: &Covector,
    order: usize,
) -> Result<DMatrix<f64>> {
    let mut m = stationarity_matrix(structure, omega, order)?;
    m = -m;
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
    }
    Ok(m)
}

/// Number of eigenvalues of a symmetric matrix strictly below `-tol`.
pub fn negative_eigenvalue_count(m: &DMatrix<f64>, tol: f64) -> usize {
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.iter().filter(|&&v| v < -tol).count()
}

/// Matrix of the pencil form `q_i - (p_i / 2s) |.|^2` on `T^L`.
///
/// The shift comes from rescaling the boundary `{q(u) = p, J(u) = s}` to the
/// unit sphere: with `J = |u|^2/2`, the rescaled constraint is
/// `q(v) = p/(2s)` on `|v| = 1`.
pub fn pencil_form_matrix(
    structure: &CarnotStructure,
    p: &VerticalPoint,
    s: f64,
    i: usize,
    order: usize,
) -> DMatrix<f64> {
    let mut m = q_form_matrix(structure, i, order);
    let shift = p.0[i] / (2.0 * s);
    for r in 0..m.nrows() {
        m[(r, r)] -= shift;
    }
    m
}

/// Embeds a zero-mean control into coordinates on `T^L`.
pub fn embed_control(control: &Control, order: usize) -> nalgebra::DVector<f64> {
    let d = control.dim();
    let mut v = nalgebra::DVector::zeros(truncation_dim(d, order));
    for (k, (u, w)) in control.coeffs.iter().enumerate() {
        if k + 1 > order {
            break;
        }
        let o = 2 * d * k;
        for r in 0..d {
            v[o + r] = u[r];
            v[o + d + r] = w[r];
        }
    }
    v
}

/// Residual `|u - 2 (omega Q) u| / |u|` of the stationarity equation for a
/// zero-mean control given by its Fourier coefficients.
pub fn stationarity_residual(
    structure: &CarnotStructure,
    omega: &Covector,
    control: &Control,
) -> Result<f64> {
    let order = control.order();
    let s = stationarity_matrix(structure, omega, order)?;
    let u = embed_control(control, order);
    let n = u.norm();
    if n == 0.0 {
        return Ok(0.0);
    }
    Ok((&u - s * &u).norm() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::CarnotStructure;

    #[test]
    fn stationarity_spectrum_heisenberg() {
        // Block k of the Heisenberg stationarity operator has eigenvalues
        // +-1/k, each twice.
        let s = CarnotStructure::heisenberg();
        let omega = Covector::from_slice(&[1.0]);
        let m = stationarity_matrix(&s, &omega, 3).unwrap();
        let mut eigs: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().cloned().collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = [
            -1.0,
            -1.0,
            -0.5,
            -0.5,
            -1.0 / 3.0,
            -1.0 / 3.0,
            1.0 / 3.0,
            1.0 / 3.0,
            0.5,
            0.5,
            1.0,
            1.0,
        ];
        let mut exp = expected.to_vec();
        exp.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (e, x) in eigs.iter().zip(exp.iter()) {
            assert!((e - x).abs() < 1e-12, "{e} vs {x}");
        }
    }

    #[test]
    fn hessian_negative_count_heisenberg() {
        // At omega = n the Hessian 1 - stationarity has 2(n-1) negative
        // eigenvalues (k = 1..n-1, multiplicity two each).
        let s = CarnotStructure::heisenberg();
        for n in 1..=4usize {
            let omega = Covector::from_slice(&[n as f64]);
            let h = hessian_matrix(&s, &omega, 2 * n).unwrap();
            let neg = negative_eigenvalue_count(&h, 1e-9);
            assert_eq!(neg, 2 * (n - 1), "n = {n}");
        }
    }
}
