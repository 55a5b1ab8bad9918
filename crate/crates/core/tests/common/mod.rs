//! Dense reference computations on nalgebra matrices.
#![allow(dead_code)]

use mixbf::linalg::{CMatrix, HermitianScm, C64};
use nalgebra::DMatrix;

pub fn to_dense(a: &CMatrix) -> DMatrix<C64> {
    DMatrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)])
}

pub fn from_dense(a: &DMatrix<C64>) -> CMatrix {
    CMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub fn dense_inverse(a: &CMatrix) -> CMatrix {
    from_dense(&to_dense(a).try_inverse().expect("invertible"))
}

/// Generalized eigenvalues of `(Φx, Φv)` in descending order and the unit
/// eigenvector of the largest.
pub fn generalized_eigen(phi_x: &HermitianScm, phi_v: &HermitianScm) -> (Vec<f64>, Vec<C64>) {
    let v = to_dense(phi_v);
    let x = to_dense(phi_x);
    let l = v.cholesky().expect("positive definite").unpack();
    let l_inv = l.clone().try_inverse().expect("invertible factor");
    let c = &l_inv * x * l_inv.adjoint();
    let c = (&c + c.adjoint()).scale(0.5);
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let y = eig.eigenvectors.column(order[0]).into_owned();
    let u = l.adjoint().solve_upper_triangular(&y).expect("triangular solve");
    let n = u.norm();
    (
        order.iter().map(|&k| eig.eigenvalues[k]).collect(),
        u.iter().map(|v| v / n).collect(),
    )
}

/// Dominant generalized eigenvector of `(Φx, Φv)`, i.e. of `Φv⁻¹Φx`, unit norm.
pub fn dominant_generalized_eigenvector(phi_x: &HermitianScm, phi_v: &HermitianScm) -> Vec<C64> {
    generalized_eigen(phi_x, phi_v).1
}

/// `|aᴴb| / (‖a‖‖b‖)`.
pub fn abs_cos(a: &[C64], b: &[C64]) -> f64 {
    let dot: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let na = a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    dot.norm() / (na * nb)
}

/// `max|a − b| / max|b|`.
pub fn rel_err(a: &CMatrix, b: &CMatrix) -> f64 {
    a.sub(b).expect("same shape").max_abs() / b.max_abs().max(1e-300)
}
