//! Dense complex kernels for small Hermitian systems.
//!
//! Every beamformer works on `M×M` matrices with `M` in the single digits, so
//! everything here is a plain row-major `Vec<Complex64>` with hand-written
//! loops. The hot per-frame paths (`matvec`, rank-1 updates, traces of
//! products) are all `O(M²)`; Cholesky-based solves are `O(M³)` and are used
//! for initialization, periodic re-inversion and the verification paths.

use std::ops::{Deref, Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Relative diagonal loading applied when a Hermitian matrix is not safely
/// positive definite.
pub const DIAGONAL_LOADING: f64 = 1e-9;

/// Dense complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(m: usize) -> Self {
        let mut out = Self::zeros(m, m);
        for i in 0..m {
            out[(i, i)] = C64::new(1.0, 0.0);
        }
        out
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                found: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let m = diag.len();
        let mut out = Self::zeros(m, m);
        for (i, &d) in diag.iter().enumerate() {
            out[(i, i)] = C64::new(d, 0.0);
        }
        out
    }

    /// `x·yᴴ`.
    pub fn outer(x: &[C64], y: &[C64]) -> Self {
        Self::from_fn(x.len(), y.len(), |i, j| x[i] * y[j].conj())
    }

    pub fn column(x: &[C64]) -> Self {
        Self {
            rows: x.len(),
            cols: 1,
            data: x.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &CMatrix) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &CMatrix) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                expected: (self.cols, other.cols),
                found: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `A·x`.
    pub fn matvec(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.cols {
            return Err(Error::ShapeMismatch {
                expected: (self.cols, 1),
                found: (x.len(), 1),
            });
        }
        let mut out = vec![C64::new(0.0, 0.0); self.rows];
        self.matvec_into(x, &mut out);
        Ok(out)
    }

    /// `A·x` into a caller-provided buffer. Lengths are the caller's contract.
    #[inline]
    pub fn matvec_into(&self, x: &[C64], out: &mut [C64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `Aᴴ·x` into a caller-provided buffer.
    #[inline]
    pub fn adjoint_matvec_into(&self, x: &[C64], out: &mut [C64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for (i, xi) in x.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * xi;
            }
        }
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Largest entry magnitude of `A − Aᴴ`.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    fn check_same_shape(&self, other: &CMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Hermitian `M×M` matrix in a spatial-covariance role (Φx, Φv, Φd, and
/// their inverses). Construction and every in-place update re-symmetrize, so
/// `‖A − Aᴴ‖∞` is zero up to the rounding of the averaging step.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianScm(CMatrix);

impl HermitianScm {
    /// Wraps a square matrix, replacing it by `(A + Aᴴ)/2`.
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::ShapeMismatch {
                expected: (m.rows(), m.rows()),
                found: m.shape(),
            });
        }
        let mut out = Self(m);
        out.symmetrize();
        Ok(out)
    }

    pub fn zeros(m: usize) -> Self {
        Self(CMatrix::zeros(m, m))
    }

    pub fn identity(m: usize) -> Self {
        Self(CMatrix::identity(m))
    }

    pub fn scaled_identity(m: usize, s: f64) -> Self {
        Self(CMatrix::identity(m).scale_real(s))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(CMatrix::from_diagonal(diag))
    }

    /// `x·xᴴ`.
    pub fn outer(x: &[C64]) -> Self {
        let mut out = Self(CMatrix::outer(x, x));
        out.symmetrize();
        out
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace_real(&self) -> f64 {
        self.0.trace().re
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.scale_real(s))
    }

    /// `self ← β·self + (1−β)·x·xᴴ`, in place.
    pub fn rank1_blend(&mut self, beta: f64, x: &[C64]) {
        let m = self.dim();
        debug_assert_eq!(x.len(), m);
        let w = 1.0 - beta;
        for i in 0..m {
            let xi = x[i] * w;
            for j in 0..m {
                let v = &mut self.0[(i, j)];
                *v = *v * beta + xi * x[j].conj();
            }
        }
        self.symmetrize();
    }

    /// Quadratic form `xᴴ·A·x` (real for Hermitian A).
    #[inline]
    pub fn quadratic_form(&self, x: &[C64]) -> f64 {
        let m = self.dim();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..m {
            let row = self.0.row(i);
            let ax: C64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            acc += x[i].conj() * ax;
        }
        acc.re
    }

    fn symmetrize(&mut self) {
        let m = self.dim();
        for i in 0..m {
            let d = self.0[(i, i)];
            self.0[(i, i)] = C64::new(d.re, 0.0);
            for j in (i + 1)..m {
                let avg = (self.0[(i, j)] + self.0[(j, i)].conj()) * 0.5;
                self.0[(i, j)] = avg;
                self.0[(j, i)] = avg.conj();
            }
        }
    }
}

impl Deref for HermitianScm {
    type Target = CMatrix;

    fn deref(&self) -> &CMatrix {
        &self.0
    }
}

/// Lower-triangular Cholesky factor `A = L·Lᴴ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: CMatrix,
    /// Diagonal loading that had to be added before factorization succeeded.
    pub loading: f64,
}

impl Cholesky {
    /// Factors `A`. If plain factorization fails or leaves a pivot below the
    /// loading level, retries with `ε·tr(A)/M·I` added to the diagonal.
    pub fn new(a: &HermitianScm) -> Result<Self> {
        let m = a.dim();
        let trace = a.trace_real();
        if !(trace.is_finite() && trace > 0.0) || !a.is_finite() {
            return Err(Error::Singular { bin: None });
        }
        let load = DIAGONAL_LOADING * trace / m as f64;
        if let Some(l) = factor(a, 0.0, load) {
            return Ok(Self { l, loading: 0.0 });
        }
        factor(a, load, 0.0)
            .map(|l| Self { l, loading: load })
            .ok_or(Error::Singular { bin: None })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn factor(&self) -> &CMatrix {
        &self.l
    }

    /// `ln det A` of the (possibly loaded) matrix.
    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| 2.0 * self.l[(i, i)].re.ln()).sum()
    }

    /// Solves `A·x = b` in place.
    pub fn solve_vec_in_place(&self, b: &mut [C64]) {
        let m = self.dim();
        let l = &self.l;
        for i in 0..m {
            let mut s = b[i];
            for k in 0..i {
                s -= l[(i, k)] * b[k];
            }
            b[i] = s / l[(i, i)].re;
        }
        for i in (0..m).rev() {
            let mut s = b[i];
            for k in (i + 1)..m {
                s -= l[(k, i)].conj() * b[k];
            }
            b[i] = s / l[(i, i)].re;
        }
    }

    pub fn solve(&self, b: &CMatrix) -> Result<CMatrix> {
        if b.rows() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: (self.dim(), b.cols()),
                found: b.shape(),
            });
        }
        let mut out = CMatrix::zeros(b.rows(), b.cols());
        let mut col = vec![C64::new(0.0, 0.0); b.rows()];
        for j in 0..b.cols() {
            for i in 0..b.rows() {
                col[i] = b[(i, j)];
            }
            self.solve_vec_in_place(&mut col);
            for i in 0..b.rows() {
                out[(i, j)] = col[i];
            }
        }
        Ok(out)
    }

    pub fn inverse(&self) -> HermitianScm {
        let inv = self
            .solve(&CMatrix::identity(self.dim()))
            .expect("identity has matching shape");
        HermitianScm::new(inv).expect("square")
    }
}

fn factor(a: &HermitianScm, load: f64, min_pivot: f64) -> Option<CMatrix> {
    let m = a.dim();
    let mut l = CMatrix::zeros(m, m);
    for j in 0..m {
        let mut d = a[(j, j)].re + load;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d.is_finite() && d > min_pivot && d > 0.0) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = C64::new(djj, 0.0);
        for i in (j + 1)..m {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Solves `A·X = B` for Hermitian positive-definite `A`.
pub fn solve_hpd(a: &HermitianScm, b: &CMatrix) -> Result<CMatrix> {
    Cholesky::new(a)?.solve(b)
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn invert_hpd(a: &HermitianScm) -> Result<HermitianScm> {
    Ok(Cholesky::new(a)?.inverse())
}

/// Result of a rank-1 inverse update, with the matching change of `ln det A`.
#[derive(Clone, Debug)]
pub struct InverseUpdate {
    pub inverse: HermitianScm,
    /// `ln det(β·A + (1−β)·x·xᴴ) − ln det A`.
    pub log_det_delta: f64,
    /// `true` when the Sherman–Morrison step was rejected and the inverse was
    /// recomputed by a direct solve.
    pub fallback: bool,
}

/// `(β·A + (1−β)·x·xᴴ)⁻¹` from `A⁻¹` via Sherman–Morrison, `O(M²)`.
pub fn rank1_inverse_update(a_inv: &HermitianScm, x: &[C64], beta: f64) -> Result<HermitianScm> {
    rank1_inverse_update_with_log_det(a_inv, x, beta).map(|u| u.inverse)
}

pub fn rank1_inverse_update_with_log_det(
    a_inv: &HermitianScm,
    x: &[C64],
    beta: f64,
) -> Result<InverseUpdate> {
    let m = a_inv.dim();
    if x.len() != m {
        return Err(Error::ShapeMismatch {
            expected: (m, 1),
            found: (x.len(), 1),
        });
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidForgetting(beta));
    }
    if beta == 1.0 {
        return Ok(InverseUpdate {
            inverse: a_inv.clone(),
            log_det_delta: 0.0,
            fallback: false,
        });
    }
    let c = (1.0 - beta) / beta;
    let mut z = vec![C64::new(0.0, 0.0); m];
    a_inv.matvec_into(x, &mut z);
    let s: f64 = x.iter().zip(&z).map(|(a, b)| (a.conj() * b).re).sum();
    let denom = 1.0 + c * s;
    if denom.is_finite() && denom > 1e-12 {
        let g = c / denom;
        let inv_beta = 1.0 / beta;
        let mut out = a_inv.matrix().clone();
        for i in 0..m {
            let zi = z[i] * g;
            for j in 0..m {
                let v = &mut out[(i, j)];
                *v = (*v - zi * z[j].conj()) * inv_beta;
            }
        }
        let inverse = HermitianScm::new(out)?;
        if inverse.is_finite() {
            return Ok(InverseUpdate {
                inverse,
                log_det_delta: m as f64 * beta.ln() + denom.ln(),
                fallback: false,
            });
        }
    }
    // Rebuild A from its inverse and invert the updated matrix directly.
    let a_chol = Cholesky::new(a_inv)?;
    let mut a = a_chol.inverse();
    let log_det_before = -a_chol.log_det();
    a.rank1_blend(beta, x);
    let chol = Cholesky::new(&a)?;
    Ok(InverseUpdate {
        inverse: chol.inverse(),
        log_det_delta: chol.log_det() - log_det_before,
        fallback: true,
    })
}

/// `Re tr{A·B}` in `O(M²)`. For Hermitian arguments the trace is real; the
/// imaginary rounding residue is dropped.
pub fn trace_of_product(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    Ok(trace_of_product_complex(a, b)?.re)
}

pub fn trace_of_product_complex(a: &CMatrix, b: &CMatrix) -> Result<C64> {
    if a.cols() != b.rows() || a.rows() != b.cols() {
        return Err(Error::ShapeMismatch {
            expected: (a.cols(), a.rows()),
            found: b.shape(),
        });
    }
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    Ok(acc)
}

pub fn vec_norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// `xᴴ·y`.
pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerIterate {
    /// Unit-norm estimate of the dominant generalized eigenvector.
    pub u: Vec<C64>,
    /// Set when an application produced a zero or non-finite vector; `u` is
    /// then the last good iterate.
    pub degenerate: bool,
}

/// Warm-started power method on `Φv⁻¹·Φx`: `iters` applications of
/// `u ← Φv⁻¹Φx·u / |Φv⁻¹Φx·u|` starting from `u_prev`.
pub fn power_iteration(
    phi_v_inv: &CMatrix,
    phi_x: &CMatrix,
    u_prev: &[C64],
    iters: usize,
) -> Result<PowerIterate> {
    let m = u_prev.len();
    if phi_v_inv.shape() != (m, m) || phi_x.shape() != (m, m) {
        return Err(Error::ShapeMismatch {
            expected: (m, m),
            found: phi_x.shape(),
        });
    }
    let n0 = vec_norm(u_prev);
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(Error::Degenerate("power iteration needs a nonzero start vector"));
    }
    let mut u: Vec<C64> = u_prev.iter().map(|v| v / n0).collect();
    let mut tmp = vec![C64::new(0.0, 0.0); m];
    let mut next = vec![C64::new(0.0, 0.0); m];
    for _ in 0..iters {
        phi_x.matvec_into(&u, &mut tmp);
        phi_v_inv.matvec_into(&tmp, &mut next);
        let n = vec_norm(&next);
        if !(n > 0.0 && n.is_finite()) {
            return Ok(PowerIterate {
                u,
                degenerate: true,
            });
        }
        for (dst, v) in u.iter_mut().zip(&next) {
            *dst = v / n;
        }
    }
    Ok(PowerIterate {
        u,
        degenerate: false,
    })
}
