//! Residual estimation: Lasso, two-stage support thresholding and the
//! restricted least-squares refit.
//!
//! The design row of an observation for user `u` is `x` placed in block
//! `[u·d, (u+1)·d)` of an `n·d` vector and zero elsewhere. Columns of different
//! users never share a row, so every problem below splits into independent
//! `d`-dimensional problems, one per user, each driven by that user's Gram
//! matrix and correlation vector.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{invalid, NelaError, Result};
use crate::linalg::{dot, pinv_solve_psd, Matrix};
use crate::scalar::Scalar;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;
/// Eigenvalue floor for the minimum-norm refit.
pub const PINV_CLIP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow<T> {
    pub user: usize,
    pub arm: Vec<T>,
    pub target: T,
}

/// Observations for the residual regression, with per-user sufficient
/// statistics kept in step.
#[derive(Debug, Clone)]
pub struct RegressionHistory<T> {
    n: usize,
    d: usize,
    rows: Vec<HistoryRow<T>>,
    gram: Vec<Matrix<T>>,
    corr: Vec<Vec<T>>,
    counts: Vec<usize>,
}

impl<T: Scalar> RegressionHistory<T> {
    pub fn new(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            rows: Vec::new(),
            gram: (0..n).map(|_| Matrix::zeros(d, d)).collect(),
            corr: vec![vec![T::zero(); d]; n],
            counts: vec![0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn nd(&self) -> usize {
        self.n * self.d
    }

    /// Number of rows, the `t` of the `1/t`-scaled objective.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[HistoryRow<T>] {
        &self.rows
    }

    pub fn push(&mut self, user: usize, arm: &[T], target: T) {
        assert!(user < self.n, "user {user} out of range");
        assert_eq!(arm.len(), self.d, "arm dimension");
        let g = &mut self.gram[user];
        for i in 0..self.d {
            for j in 0..self.d {
                g[(i, j)] += arm[i] * arm[j];
            }
        }
        for (c, &x) in self.corr[user].iter_mut().zip(arm) {
            *c += x * target;
        }
        self.counts[user] += 1;
        self.rows.push(HistoryRow {
            user,
            arm: arm.to_vec(),
            target,
        });
    }

    /// `Σ x xᵀ` over the rows of `user`.
    pub fn gram(&self, user: usize) -> &Matrix<T> {
        &self.gram[user]
    }

    /// `Σ x · target` over the rows of `user`.
    pub fn correlation(&self, user: usize) -> &[T] {
        &self.corr[user]
    }

    /// Full-design product `𝒳 v` evaluated row by row.
    pub fn predict(&self, v: &[T]) -> Vec<T> {
        let d = self.d;
        self.rows
            .iter()
            .map(|r| dot(&r.arm, &v[r.user * d..(r.user + 1) * d]))
            .collect()
    }

    /// Writes the block rows, targets, the estimate and both supports.
    pub fn write_debug_dump(&self, path: &Path, v_hat: &[T], support: &SupportEstimate<T>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# lambda_t={}", support.lambda_t)?;
        writeln!(out, "# j0={:?}", support.j0)?;
        writeln!(out, "# j1={:?}", support.j1)?;
        let v: Vec<String> = v_hat.iter().map(|x| x.to_string()).collect();
        writeln!(out, "# v_hat={}", v.join(" "))?;
        write!(out, "user,target")?;
        for k in 0..self.d {
            write!(out, ",x{k}")?;
        }
        writeln!(out)?;
        for r in &self.rows {
            write!(out, "{},{}", r.user, r.target)?;
            for x in &r.arm {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `λ₀ √(2 log t · log(nd) / t)`, with `log t` floored at `log 2`.
pub fn lambda_schedule<T: Scalar>(t: usize, n: usize, d: usize, lambda0: T) -> Result<T> {
    if t == 0 {
        return Err(invalid("lambda schedule needs t >= 1"));
    }
    let nd = n * d;
    if nd <= 1 {
        return Err(invalid(format!("lambda schedule needs nd > 1, got {nd}")));
    }
    let log_t = T::of_usize(t.max(2)).ln();
    let log_nd = T::of_usize(nd).ln();
    Ok(lambda0 * (T::of(2.0) * log_t * log_nd / T::of_usize(t)).sqrt())
}

/// `(1/t)‖ℛ − 𝒳v‖² + λ‖v‖₁`, evaluated directly from the rows.
pub fn lasso_objective<T: Scalar>(history: &RegressionHistory<T>, v: &[T], lambda: T) -> T {
    let t = T::of_usize(history.len().max(1));
    let pred = history.predict(v);
    let rss: T = history
        .rows
        .iter()
        .zip(&pred)
        .map(|(r, &p)| (r.target - p) * (r.target - p))
        .sum();
    rss / t + lambda * v.iter().map(|x| x.abs()).sum::<T>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit<T> {
    pub coef: Vec<T>,
    pub sweeps: usize,
    /// Largest KKT violation at return.
    pub kkt_gap: T,
}

fn soft_threshold<T: Scalar>(z: T, gamma: T) -> T {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        T::zero()
    }
}

/// Cyclic coordinate descent for `(1/t)‖ℛ − 𝒳v‖² + λ‖v‖₁` from a zero start.
pub fn lasso_solve<T: Scalar>(
    history: &RegressionHistory<T>,
    lambda: T,
    tol: T,
    max_sweeps: usize,
) -> Result<LassoFit<T>> {
    lasso_solve_from(history, lambda, tol, max_sweeps, None)
}

/// Coordinate descent warm-started at `start` (all zeros when `None`).
///
/// Converged when the largest coordinate move in a sweep is below `tol` and
/// every coordinate meets the KKT condition within `tol·(1+λ)`. Coordinates
/// with no data stay at zero.
pub fn lasso_solve_from<T: Scalar>(
    history: &RegressionHistory<T>,
    lambda: T,
    tol: T,
    max_sweeps: usize,
    start: Option<&[T]>,
) -> Result<LassoFit<T>> {
    if history.is_empty() {
        return Err(invalid("lasso needs at least one observation"));
    }
    if !(lambda >= T::zero()) {
        return Err(invalid(format!("lambda {lambda} must be nonnegative")));
    }
    if !(tol > T::zero()) {
        return Err(invalid("tolerance must be positive"));
    }
    let (n, d) = (history.n, history.d);
    let t = T::of_usize(history.len());
    let half_t_lambda = t * lambda / T::of(2.0);
    let kkt_tol = tol * (T::one() + lambda);

    let mut coef = match start {
        Some(s) if s.len() == n * d => s.to_vec(),
        Some(s) => return Err(invalid(format!("warm start has length {}, expected {}", s.len(), n * d))),
        None => vec![T::zero(); n * d],
    };
    let mut sweeps = 0;
    let mut worst_gap = T::zero();

    for user in 0..n {
        let block = &mut coef[user * d..(user + 1) * d];
        if history.counts[user] == 0 {
            block.iter_mut().for_each(|x| *x = T::zero());
            continue;
        }
        let g = &history.gram[user];
        let c = &history.corr[user];
        for k in 0..d {
            if g[(k, k)] == T::zero() {
                block[k] = T::zero();
            }
        }
        let mut converged = false;
        for sweep in 1..=max_sweeps {
            let max_move = sweep_block(g, c, block, half_t_lambda);
            sweeps = sweeps.max(sweep);
            if max_move < tol {
                let gap = kkt_violation(g, c, block, t, lambda);
                if gap <= kkt_tol {
                    worst_gap = worst_gap.max(gap);
                    converged = true;
                    break;
                }
            }
        }
        if !converged {
            let gap = kkt_violation(g, c, block, t, lambda);
            return Err(NelaError::Convergence {
                iterations: max_sweeps,
                gap: gap.as_f64(),
            });
        }
    }
    Ok(LassoFit {
        coef,
        sweeps,
        kkt_gap: worst_gap,
    })
}

/// One cyclic pass of exact coordinate minimization over a user block.
/// Returns the largest coordinate move.
fn sweep_block<T: Scalar>(g: &Matrix<T>, c: &[T], block: &mut [T], half_t_lambda: T) -> T {
    let mut max_move = T::zero();
    for k in 0..block.len() {
        let gkk = g[(k, k)];
        if gkk == T::zero() {
            continue;
        }
        // c_k − Σ_{j≠k} G_kj v_j
        let partial = c[k] - dot(g.row(k), block) + gkk * block[k];
        let next = soft_threshold(partial, half_t_lambda) / gkk;
        max_move = max_move.max((next - block[k]).abs());
        block[k] = next;
    }
    max_move
}

/// A single coordinate-descent sweep over all `n·d` coordinates, in place.
/// Returns the largest coordinate move.
pub fn lasso_sweep<T: Scalar>(history: &RegressionHistory<T>, coef: &mut [T], lambda: T) -> T {
    assert_eq!(coef.len(), history.nd());
    let d = history.d;
    let half_t_lambda = T::of_usize(history.len()) * lambda / T::of(2.0);
    let mut max_move = T::zero();
    for user in 0..history.n {
        if history.counts[user] == 0 {
            continue;
        }
        let block = &mut coef[user * d..(user + 1) * d];
        max_move = max_move.max(sweep_block(&history.gram[user], &history.corr[user], block, half_t_lambda));
    }
    max_move
}

fn kkt_violation<T: Scalar>(g: &Matrix<T>, c: &[T], v: &[T], t: T, lambda: T) -> T {
    let two_over_t = T::of(2.0) / t;
    let mut worst = T::zero();
    for k in 0..v.len() {
        if g[(k, k)] == T::zero() {
            continue;
        }
        let grad = two_over_t * (dot(g.row(k), v) - c[k]);
        let viol = if v[k] > T::zero() {
            (grad + lambda).abs()
        } else if v[k] < T::zero() {
            (grad - lambda).abs()
        } else {
            (grad.abs() - lambda).max(T::zero())
        };
        worst = worst.max(viol);
    }
    worst
}

/// Support estimates after the first and second thresholds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SupportEstimate<T> {
    /// `{j : |v₀(j)| > 4λ_t}`, ascending.
    pub j0: Vec<usize>,
    /// `{j ∈ j0 : |v₀(j)| > 4λ_t √|j0|}`, ascending.
    pub j1: Vec<usize>,
    pub lambda_t: T,
}

pub fn two_stage_threshold<T: Scalar>(v0: &[T], lambda_t: T) -> SupportEstimate<T> {
    let first = T::of(4.0) * lambda_t;
    let j0: Vec<usize> = (0..v0.len()).filter(|&j| v0[j].abs() > first).collect();
    let second = first * T::of_usize(j0.len()).sqrt();
    let j1 = j0.iter().copied().filter(|&j| v0[j].abs() > second).collect();
    SupportEstimate { j0, j1, lambda_t }
}

/// Users owning at least one support coordinate.
pub fn users_in_support(support: &[usize], d: usize) -> BTreeSet<usize> {
    support.iter().map(|&j| j / d).collect()
}

/// Least squares on the columns in `support`, zero elsewhere.
///
/// Uses the minimum-norm solution when the restricted Gram matrix is
/// singular, so coordinates without data come back as zero.
pub fn restricted_least_squares<T: Scalar>(history: &RegressionHistory<T>, support: &[usize]) -> Vec<T> {
    let (n, d) = (history.n, history.d);
    let mut v = vec![T::zero(); n * d];
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &j in support {
        assert!(j < n * d, "support index {j} out of range");
        by_user[j / d].push(j % d);
    }
    for (user, idx) in by_user.iter_mut().enumerate() {
        if idx.is_empty() || history.counts[user] == 0 {
            continue;
        }
        idx.sort_unstable();
        idx.dedup();
        let g = history.gram[user].submatrix(idx);
        let c: Vec<T> = idx.iter().map(|&k| history.corr[user][k]).collect();
        let sol = pinv_solve_psd(&g, &c, T::of(PINV_CLIP));
        for (&k, x) in idx.iter().zip(sol) {
            v[user * d + k] = x;
        }
    }
    v
}
