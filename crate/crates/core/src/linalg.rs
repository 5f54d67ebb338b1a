//! Small dense linear algebra on row-major buffers.
//!
//! Only what the estimators need: rank-one updates, Cholesky, symmetric
//! eigendecomposition for tiny blocks, and a handful of products.

use std::ops::{Index, IndexMut};

use crate::error::{NelaError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, T::one())
    }

    pub fn scaled_identity(n: usize, s: T) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = s;
        }
        m
    }

    /// Builds a matrix from row vectors. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[T]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// Symmetric rank-one update `self += s · z zᵀ` restricted to the listed
    /// nonzero coordinates of `z`.
    pub fn add_sparse_outer(&mut self, nz: &[(usize, T)], s: T) {
        for &(i, zi) in nz {
            for &(j, zj) in nz {
                self[(i, j)] += s * zi * zj;
            }
        }
    }

    /// Quadratic form `xᵀ M x`.
    pub fn quad_form(&self, x: &[T]) -> T {
        assert_eq!(self.rows, self.cols);
        assert_eq!(x.len(), self.cols);
        let mut acc = T::zero();
        for i in 0..self.rows {
            if x[i] != T::zero() {
                acc += x[i] * dot(self.row(i), x);
            }
        }
        acc
    }

    /// Copies the principal submatrix on `idx`.
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), idx.len(), |a, b| self[(idx[a], idx[b])])
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > T::zero()) {
            return Err(NelaError::NotPositiveDefinite {
                pivot: j,
                value: diag.as_f64(),
            });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// `log det(A)` via Cholesky.
pub fn log_det_spd<T: Scalar>(a: &Matrix<T>) -> Result<T> {
    let l = cholesky(a)?;
    Ok((0..a.rows()).map(|i| l[(i, i)].ln()).sum::<T>() * T::of(2.0))
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn inverse_spd<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let n = a.rows();
    let l = cholesky(a)?;
    // L⁻¹ by forward substitution, then A⁻¹ = L⁻ᵀ L⁻¹.
    let mut linv = Matrix::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { T::one() } else { T::zero() };
            for k in col..i {
                s -= l[(i, k)] * linv[(k, col)];
            }
            linv[(i, col)] = s / l[(i, i)];
        }
    }
    let mut inv = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = T::zero();
            for k in i..n {
                s += linv[(k, i)] * linv[(k, j)];
            }
            inv[(i, j)] = s;
            inv[(j, i)] = s;
        }
    }
    Ok(inv)
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors stored as columns.
/// Intended for the small per-user blocks (dimension ≤ a few dozen).
pub fn symmetric_eigen<T: Scalar>(a: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut scale = T::zero();
        for i in 0..n {
            scale += m[(i, i)] * m[(i, i)];
            for j in i + 1..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off <= eps * eps * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[(i, i)]).collect(), v)
}

/// Minimum-norm solution of `G x = c` for symmetric positive-semidefinite `G`.
///
/// Eigenvalues at or below `clip · max(1, λ_max)` are treated as zero.
pub fn pinv_solve_psd<T: Scalar>(g: &Matrix<T>, c: &[T], clip: T) -> Vec<T> {
    let n = g.rows();
    if n == 0 {
        return Vec::new();
    }
    let (vals, vecs) = symmetric_eigen(g);
    let top = vals.iter().fold(T::one(), |m, &x| m.max(x));
    let cutoff = clip * top;
    let mut x = vec![T::zero(); n];
    for k in 0..n {
        if vals[k] <= cutoff {
            continue;
        }
        let vk = vecs.column(k);
        let coef = dot(&vk, c) / vals[k];
        for (xi, &vi) in x.iter_mut().zip(&vk) {
            *xi += coef * vi;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Matrix<f64> {
        let b = Matrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * i as f64);
        let mut a = b.transpose().matmul(&b);
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        a
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = spd(6);
        let inv = inverse_spd(&a).unwrap();
        let err = a.matmul(&inv).sub(&Matrix::identity(6)).frobenius_norm();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn log_det_of_diagonal() {
        let mut a = Matrix::<f64>::identity(3);
        a[(0, 0)] = 2.0;
        a[(1, 1)] = 3.0;
        a[(2, 2)] = 5.0;
        assert!((log_det_spd(&a).unwrap() - 30f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(
            cholesky(&a),
            Err(NelaError::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn eigen_reconstructs() {
        let a = spd(5);
        let (vals, vecs) = symmetric_eigen(&a);
        let lam = Matrix::from_fn(5, 5, |i, j| if i == j { vals[i] } else { 0.0 });
        let rec = vecs.matmul(&lam).matmul(&vecs.transpose());
        assert!(rec.sub(&a).frobenius_norm() < 1e-9);
    }

    #[test]
    fn pinv_zeroes_null_direction() {
        // G = diag(2, 0): min-norm solution puts nothing on the null axis.
        let g = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]]);
        let x = pinv_solve_psd(&g, &[4.0, 0.0], 1e-10);
        assert_eq!(x, vec![2.0, 0.0]);
    }

    #[test]
    fn works_in_f32() {
        let a = spd(4).cast::<f32>();
        let inv = inverse_spd(&a).unwrap();
        let err = a.matmul(&inv).sub(&Matrix::identity(4)).frobenius_norm();
        assert!(err < 1e-3);
    }
}
