//! User-influence matrices.
//!
//! `W(i, j)` is the influence of user `i` on user `j`. Every column is a
//! probability vector: column `u` says how all users' preference vectors mix
//! into user `u`'s payoff.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{invalid, NelaError, Result};
use crate::io::read_matrix_csv;
use crate::linalg::{dot, norm2, Matrix};
use crate::scalar::Scalar;

/// Column sums must hit 1 within this tolerance after construction.
pub const COLUMN_SUM_TOL: f64 = 1e-9;
/// Loaded files may be off by this much before renormalization.
pub const LOAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix<T> {
    w: Matrix<T>,
}

impl<T: Scalar> InfluenceMatrix<T> {
    /// Validates a column-stochastic nonnegative matrix.
    pub fn new(w: Matrix<T>) -> Result<Self> {
        let n = w.rows();
        if n == 0 || w.cols() != n {
            return Err(invalid(format!(
                "influence matrix must be square and nonempty, got {}x{}",
                w.rows(),
                w.cols()
            )));
        }
        for j in 0..n {
            let mut sum = T::zero();
            for i in 0..n {
                let x = w[(i, j)];
                if !(x >= T::zero()) {
                    return Err(invalid(format!("entry ({i},{j}) = {x} is negative")));
                }
                sum += x;
            }
            if (sum - T::one()).abs() > tol::<T>(COLUMN_SUM_TOL) {
                return Err(invalid(format!("column {j} sums to {sum}")));
            }
        }
        Ok(Self { w })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            w: Matrix::identity(n),
        }
    }

    pub fn n(&self) -> usize {
        self.w.rows()
    }

    /// Influence of user `i` on user `j`.
    pub fn weight(&self, i: usize, j: usize) -> T {
        self.w[(i, j)]
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.w
    }

    /// Nonzero entries of column `user` as `(row, weight)`.
    pub fn column_support(&self, user: usize) -> Vec<(usize, T)> {
        (0..self.n())
            .filter_map(|i| {
                let x = self.w[(i, user)];
                (x != T::zero()).then_some((i, x))
            })
            .collect()
    }
}

// Tolerances are stated for f64; single precision gets a floor it can meet.
fn tol<T: Scalar>(t: f64) -> T {
    T::of(t).max(T::epsilon() * T::of(64.0))
}

/// Equal-influence graph: column `j` puts `1/(1+deg j)` on `j` and each neighbour.
///
/// `edges` must list both directions of every undirected edge.
pub fn build_uniform_graph<T: Scalar>(edges: &[(usize, usize)], n: usize) -> Result<InfluenceMatrix<T>> {
    if n == 0 {
        return Err(invalid("graph needs at least one user"));
    }
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(invalid(format!("edge ({i},{j}) out of range for n={n}")));
        }
        if i == j {
            return Err(invalid(format!("self-loop at node {i}")));
        }
        adj[i].insert(j);
    }
    for (i, nbrs) in adj.iter().enumerate() {
        for &j in nbrs {
            if !adj[j].contains(&i) {
                return Err(invalid(format!("edge ({i},{j}) has no reverse ({j},{i})")));
            }
        }
    }
    let mut w = Matrix::zeros(n, n);
    for (j, nbrs) in adj.iter().enumerate() {
        let share = T::one() / T::of_usize(1 + nbrs.len());
        w[(j, j)] = share;
        for &i in nbrs {
            w[(i, j)] = share;
        }
    }
    InfluenceMatrix::new(w)
}

/// Both directions of every edge of a star centred at `center`.
pub fn star_edges(n: usize, center: usize) -> Vec<(usize, usize)> {
    (0..n)
        .filter(|&i| i != center)
        .flat_map(|i| [(center, i), (i, center)])
        .collect()
}

/// Both directions of every edge of the complete graph.
pub fn complete_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

/// Feature-proximity graph.
///
/// Scores are `max(⟨θ_i, θ_j⟩, 0)`. Off-diagonal scores strictly below the
/// `(1 - keep_fraction)` quantile of all off-diagonal scores are dropped
/// (ties at the cutoff survive), then every column is ℓ1-normalized with the
/// diagonal treated like any other entry. A column left empty falls back to
/// pure self-influence.
pub fn build_similarity_graph<T: Scalar>(theta: &Matrix<T>, keep_fraction: T) -> Result<InfluenceMatrix<T>> {
    if !(keep_fraction > T::zero() && keep_fraction <= T::one()) {
        return Err(invalid(format!("keep_fraction {keep_fraction} not in (0, 1]")));
    }
    let n = theta.cols();
    if n == 0 {
        return Err(invalid("theta has no columns"));
    }
    let cols: Vec<Vec<T>> = (0..n).map(|j| theta.column(j)).collect();
    for (j, c) in cols.iter().enumerate() {
        let norm = norm2(c);
        if (norm - T::one()).abs() > tol::<T>(1e-6) {
            return Err(invalid(format!("theta column {j} has norm {norm}, expected 1")));
        }
    }
    let mut s = Matrix::from_fn(n, n, |i, j| dot(&cols[i], &cols[j]).max(T::zero()));

    let mut off: Vec<T> = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off.push(s[(i, j)]);
            }
        }
    }
    if !off.is_empty() {
        off.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
        let drop = (T::one() - keep_fraction) * T::of_usize(off.len());
        let k = (drop.as_f64() + 1e-9).floor() as usize;
        if k > 0 {
            let cutoff = off[k.min(off.len() - 1)];
            for i in 0..n {
                for j in 0..n {
                    if i != j && s[(i, j)] < cutoff {
                        s[(i, j)] = T::zero();
                    }
                }
            }
        }
    }
    normalize_columns(&mut s);
    InfluenceMatrix::new(s)
}

fn normalize_columns<T: Scalar>(s: &mut Matrix<T>) {
    let n = s.rows();
    for j in 0..n {
        let sum: T = (0..n).map(|i| s[(i, j)]).sum();
        if sum > T::zero() {
            for i in 0..n {
                s[(i, j)] /= sum;
            }
        } else {
            s[(j, j)] = T::one();
        }
    }
}

/// Loads an influence matrix from header-less CSV (row `i` is `W(i, :)`).
///
/// Columns within `1e-6` of summing to one are renormalized; anything else
/// is rejected.
pub fn load_influence_matrix<T: Scalar>(path: &Path) -> Result<InfluenceMatrix<T>> {
    let mut w: Matrix<T> = read_matrix_csv(path)?;
    let err = |message: String| NelaError::Load {
        path: path.to_path_buf(),
        message,
    };
    let n = w.rows();
    if w.cols() != n {
        return Err(err(format!("expected a square matrix, got {}x{}", n, w.cols())));
    }
    for i in 0..n {
        for j in 0..n {
            if !(w[(i, j)] >= T::zero()) {
                return Err(err(format!("row {i}, column {j}: negative entry {}", w[(i, j)])));
            }
        }
    }
    for j in 0..n {
        let sum: T = (0..n).map(|i| w[(i, j)]).sum();
        if (sum - T::one()).abs() > tol::<T>(LOAD_TOL) {
            return Err(err(format!("column {j} sums to {sum}")));
        }
        for i in 0..n {
            w[(i, j)] /= sum;
        }
    }
    InfluenceMatrix::new(w).map_err(|e| err(e.to_string()))
}
