//! Online ridge regression with an explicitly maintained inverse.
//!
//! `A = A₀ + Σ z zᵀ`, `b = Σ z y`, `θ̂ = A⁻¹ b`. The inverse follows each
//! observation by Sherman–Morrison and `log det A` by the matrix determinant
//! lemma, so neither is ever refactorized.

use crate::error::{invalid, Result};
use crate::linalg::{dot, inverse_spd, log_det_spd, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct RidgeModel<T> {
    a: Matrix<T>,
    a_inv: Matrix<T>,
    log_det: T,
    b: Vec<T>,
    theta: Vec<T>,
}

impl<T: Scalar> RidgeModel<T> {
    /// `A₀ = λ I`.
    pub fn new(dim: usize, lambda: T) -> Result<Self> {
        if !(lambda > T::zero()) {
            return Err(invalid(format!("ridge weight {lambda} must be positive")));
        }
        Ok(Self {
            a: Matrix::scaled_identity(dim, lambda),
            a_inv: Matrix::scaled_identity(dim, T::one() / lambda),
            log_det: T::of_usize(dim) * lambda.ln(),
            b: vec![T::zero(); dim],
            theta: vec![T::zero(); dim],
        })
    }

    /// Arbitrary symmetric positive-definite prior precision.
    pub fn with_prior(prior: Matrix<T>) -> Result<Self> {
        let dim = prior.rows();
        let a_inv = inverse_spd(&prior)?;
        let log_det = log_det_spd(&prior)?;
        Ok(Self {
            a: prior,
            a_inv,
            log_det,
            b: vec![T::zero(); dim],
            theta: vec![T::zero(); dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn a_inv(&self) -> &Matrix<T> {
        &self.a_inv
    }

    pub fn log_det(&self) -> T {
        self.log_det
    }

    pub fn b(&self) -> &[T] {
        &self.b
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    /// `A += z zᵀ` for a sparse `z` given as `(index, value)` pairs; updates
    /// the inverse and log-determinant. Does not touch `b` or `θ̂`.
    pub fn rank_one_update(&mut self, z: &[(usize, T)]) {
        let dim = self.dim();
        self.a.add_sparse_outer(z, T::one());
        // u = A⁻¹ z
        let mut u = vec![T::zero(); dim];
        for (i, ui) in u.iter_mut().enumerate() {
            let row = self.a_inv.row(i);
            for &(k, zk) in z {
                *ui += row[k] * zk;
            }
        }
        let denom = T::one() + z.iter().map(|&(k, zk)| zk * u[k]).sum::<T>();
        assert!(
            denom >= T::one() - T::of(1e-12).max(T::epsilon() * T::of(16.0)),
            "Sherman–Morrison denominator {denom} < 1"
        );
        for i in 0..dim {
            let s = u[i] / denom;
            if s == T::zero() {
                continue;
            }
            for (a, &uj) in self.a_inv.row_mut(i).iter_mut().zip(&u) {
                *a -= s * uj;
            }
        }
        self.log_det += denom.ln();
    }

    /// `b += z · y`.
    pub fn accumulate(&mut self, z: &[(usize, T)], y: T) {
        for &(k, zk) in z {
            self.b[k] += zk * y;
        }
    }

    /// Recomputes `θ̂ = A⁻¹ b`.
    pub fn refresh(&mut self) {
        self.theta = self.a_inv.matvec(&self.b);
    }

    /// Overrides the estimate, setting `b = A θ` so that `θ̂ = A⁻¹ b` still holds.
    pub fn set_theta(&mut self, theta: &[T]) {
        assert_eq!(theta.len(), self.dim());
        self.b = self.a.matvec(theta);
        self.theta = theta.to_vec();
    }

    /// One full observation: rank-one update, `b += z y`, refresh.
    pub fn observe(&mut self, z: &[(usize, T)], y: T) {
        self.rank_one_update(z);
        self.accumulate(z, y);
        self.refresh();
    }

    /// Dense-vector convenience wrapper around [`observe`](Self::observe).
    pub fn observe_dense(&mut self, z: &[T], y: T) {
        self.observe(&sparse(z), y);
    }

    /// `‖z‖_{A⁻¹}`.
    pub fn width(&self, z: &[T]) -> T {
        self.a_inv.quad_form(z).max(T::zero()).sqrt()
    }

    pub fn predict(&self, z: &[T]) -> T {
        dot(&self.theta, z)
    }

    /// Self-normalized confidence radius with this model's dimension:
    /// `σ √(log det A − dim·log λ − 2 log δ) + √λ · s_θ`.
    pub fn confidence_radius(&self, sigma: T, lambda: T, delta: T, s_theta: T) -> T {
        confidence_radius(sigma, self.log_det, self.dim(), lambda, delta, s_theta)
    }
}

/// `scale · √max(0, log det A − dim·log λ − 2 log δ) + √λ · s_θ`.
pub fn confidence_radius<T: Scalar>(scale: T, log_det: T, dim: usize, lambda: T, delta: T, s_theta: T) -> T {
    let inner = log_det - T::of_usize(dim) * lambda.ln() - T::of(2.0) * delta.ln();
    scale * inner.max(T::zero()).sqrt() + lambda.sqrt() * s_theta
}

/// Nonzero entries of a dense vector.
pub fn sparse<T: Scalar>(z: &[T]) -> Vec<(usize, T)> {
    z.iter()
        .enumerate()
        .filter(|(_, &x)| x != T::zero())
        .map(|(i, &x)| (i, x))
        .collect()
}
