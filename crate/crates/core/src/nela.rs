//! Networked LinUCB with residual-based anomaly detection.
//!
//! Preferences `vec(Θ)` are learned by ridge regression on graph-mixed
//! features; the residual `vec(V)` is learned from what the ridge part leaves
//! unexplained, through a Lasso fit, two thresholding passes and a
//! least-squares refit on the surviving coordinates. Users owning a surviving
//! coordinate are reported as anomalous.
//!
//! Flat index `i·d + k` is coordinate `k` of user `i`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::ArmSet;
use crate::error::{invalid, Result};
use crate::graph::InfluenceMatrix;
use crate::linalg::{dot, Matrix};
use crate::policy::Policy;
use crate::ridge::{confidence_radius, RidgeModel};
use crate::scalar::Scalar;
use crate::sparse_regression::{
    lambda_schedule, lasso_solve_from, restricted_least_squares, two_stage_threshold, users_in_support,
    RegressionHistory, SupportEstimate, DEFAULT_MAX_SWEEPS, DEFAULT_TOL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelaConfig<T> {
    /// Ridge weight on `vec(Θ)`.
    pub lambda1: T,
    /// Coefficient of the Lasso schedule.
    pub lambda0: T,
    pub sigma: T,
    pub delta: T,
    /// Bound on arm norms.
    pub s_x: T,
    /// Bound on `‖vec(V)‖₂`.
    pub s_v: T,
    /// Bound on `‖vec(Θ)‖₂`.
    pub s_theta: T,
    /// Rounds before the first residual fit; `None` means `10·⌈ln(nd)⌉`.
    pub warmup_rounds: Option<usize>,
    /// Refit the residual every this many rounds.
    pub lasso_every: usize,
    pub lasso_tol: T,
    pub lasso_max_sweeps: usize,
    /// Replaces the confidence radius when set.
    pub alpha_override: Option<T>,
}

impl<T: Scalar> NelaConfig<T> {
    /// δ = 0.001, σ = 0.01, λ₀ = 0.02, λ₁ = 1, s_x = s_θ = 1 and
    /// `s_v = 10·√anomaly_count`.
    pub fn with_anomaly_count(anomaly_count: usize) -> Self {
        Self {
            lambda1: T::one(),
            lambda0: T::of(0.02),
            sigma: T::of(0.01),
            delta: T::of(0.001),
            s_x: T::one(),
            s_v: T::of(10.0) * T::of_usize(anomaly_count).sqrt(),
            s_theta: T::one(),
            warmup_rounds: None,
            lasso_every: 1,
            // 1e-8 is below single precision; floor at a few ulps.
            lasso_tol: T::of(DEFAULT_TOL).max(T::epsilon() * T::of(64.0)),
            lasso_max_sweeps: DEFAULT_MAX_SWEEPS,
            alpha_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda1", self.lambda1),
            ("sigma", self.sigma),
            ("s_x", self.s_x),
            ("s_theta", self.s_theta),
            ("lasso_tol", self.lasso_tol),
        ];
        for (name, x) in positive {
            if !(x > T::zero()) {
                return Err(invalid(format!("{name} must be positive, got {x}")));
            }
        }
        if !(self.lambda0 >= T::zero()) || !(self.s_v >= T::zero()) {
            return Err(invalid("lambda0 and s_v must be nonnegative"));
        }
        if !(self.delta > T::zero() && self.delta <= T::one()) {
            return Err(invalid(format!("delta {} not in (0, 1]", self.delta)));
        }
        if self.lasso_every == 0 {
            return Err(invalid("lasso_every must be at least 1"));
        }
        Ok(())
    }

    pub fn resolved_warmup(&self, nd: usize) -> usize {
        self.warmup_rounds
            .unwrap_or_else(|| 10 * (nd as f64).ln().ceil().max(0.0) as usize)
    }
}

impl<T: Scalar> Default for NelaConfig<T> {
    fn default() -> Self {
        Self::with_anomaly_count(0)
    }
}

/// The `n·d` feature whose block `j` is `W(j, user) · x`, as a dense vector.
pub fn mixed_feature<T: Scalar>(x: &[T], user: usize, w: &InfluenceMatrix<T>) -> Vec<T> {
    let d = x.len();
    let mut z = vec![T::zero(); w.n() * d];
    for (j, wj) in w.column_support(user) {
        for (zk, &xk) in z[j * d..(j + 1) * d].iter_mut().zip(x) {
            *zk = wj * xk;
        }
    }
    z
}

fn mixed_feature_sparse<T: Scalar>(x: &[T], weights: &[(usize, T)]) -> Vec<(usize, T)> {
    let d = x.len();
    let mut z = Vec::with_capacity(weights.len() * d);
    for &(j, wj) in weights {
        for (k, &xk) in x.iter().enumerate() {
            if xk != T::zero() {
                z.push((j * d + k, wj * xk));
            }
        }
    }
    z
}

/// `Σ_{j,k} w_j w_k M[block j, block k]`, the `d × d` matrix whose quadratic
/// form in `x` equals the quadratic form of `M` in the mixed feature of `x`.
pub(crate) fn mixed_block_form<T: Scalar>(m: &Matrix<T>, weights: &[(usize, T)], d: usize) -> Matrix<T> {
    let mut c = Matrix::zeros(d, d);
    for &(j, wj) in weights {
        for &(k, wk) in weights {
            let s = wj * wk;
            for a in 0..d {
                let row = &m.row(j * d + a)[k * d..(k + 1) * d];
                for (cb, &mb) in c.row_mut(a).iter_mut().zip(row) {
                    *cb += s * mb;
                }
            }
        }
    }
    c
}

/// Debug view of the policy state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelaSnapshot {
    pub t: usize,
    /// Diagonal `d × d` blocks of `A`, one per user.
    pub a_diag_blocks: Vec<Vec<Vec<f64>>>,
    pub log_det_a: f64,
    pub theta_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub lambda_t: f64,
    pub support_j0: Vec<usize>,
    pub support_j1: Vec<usize>,
    pub detected: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct NelaPolicy<T> {
    name: String,
    config: NelaConfig<T>,
    w: InfluenceMatrix<T>,
    n: usize,
    d: usize,
    warmup: usize,
    residuals: bool,
    ridge: RidgeModel<T>,
    v_hat: Vec<T>,
    lasso_start: Vec<T>,
    history: RegressionHistory<T>,
    support: SupportEstimate<T>,
    detected: BTreeSet<usize>,
    t: usize,
}

impl<T: Scalar> NelaPolicy<T> {
    pub fn new(d: usize, w: InfluenceMatrix<T>, config: NelaConfig<T>) -> Result<Self> {
        Self::build("nela", d, w, config, true)
    }

    /// Same ridge machinery with the residual pinned at zero and no detection.
    pub fn without_residuals(name: &str, d: usize, w: InfluenceMatrix<T>, config: NelaConfig<T>) -> Result<Self> {
        Self::build(name, d, w, config, false)
    }

    fn build(name: &str, d: usize, w: InfluenceMatrix<T>, config: NelaConfig<T>, residuals: bool) -> Result<Self> {
        config.validate()?;
        if d == 0 {
            return Err(invalid("feature dimension must be positive"));
        }
        let n = w.n();
        let nd = n * d;
        if residuals && nd <= 1 {
            return Err(invalid("residual estimation needs n·d > 1"));
        }
        Ok(Self {
            name: name.to_string(),
            warmup: config.resolved_warmup(nd),
            ridge: RidgeModel::new(nd, config.lambda1)?,
            v_hat: vec![T::zero(); nd],
            lasso_start: vec![T::zero(); nd],
            history: RegressionHistory::new(n, d),
            support: SupportEstimate::default(),
            detected: BTreeSet::new(),
            t: 0,
            config,
            w,
            n,
            d,
            residuals,
        })
    }

    pub fn config(&self) -> &NelaConfig<T> {
        &self.config
    }

    pub fn rounds(&self) -> usize {
        self.t
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    pub fn ridge(&self) -> &RidgeModel<T> {
        &self.ridge
    }

    pub fn theta_hat(&self) -> &[T] {
        self.ridge.theta()
    }

    pub fn v_hat(&self) -> &[T] {
        &self.v_hat
    }

    pub fn support(&self) -> &SupportEstimate<T> {
        &self.support
    }

    pub fn history(&self) -> &RegressionHistory<T> {
        &self.history
    }

    /// Exploration radius: `(σ + 2 s_x s_v)·√(log det A − nd·log λ₁ − 2 log δ) + √λ₁ s_θ`.
    pub fn alpha(&self) -> T {
        if let Some(a) = self.config.alpha_override {
            return a;
        }
        let c = &self.config;
        confidence_radius(
            c.sigma + T::of(2.0) * c.s_x * c.s_v,
            self.ridge.log_det(),
            self.n * self.d,
            c.lambda1,
            c.delta,
            c.s_theta,
        )
    }

    /// `(Θ̂W)(:, user) + V̂(:, user)`.
    fn exploitation_vector(&self, weights: &[(usize, T)], user: usize) -> Vec<T> {
        let d = self.d;
        let theta = self.ridge.theta();
        let mut p = self.v_hat[user * d..(user + 1) * d].to_vec();
        for &(j, wj) in weights {
            for (pk, &tk) in p.iter_mut().zip(&theta[j * d..(j + 1) * d]) {
                *pk += wj * tk;
            }
        }
        p
    }

    /// Replaces both estimates, e.g. with the true parameters.
    pub fn set_estimates(&mut self, theta_hat: &[T], v_hat: &[T]) -> Result<()> {
        let nd = self.n * self.d;
        if theta_hat.len() != nd || v_hat.len() != nd {
            return Err(invalid("estimate length must be n·d"));
        }
        self.ridge.set_theta(theta_hat);
        self.v_hat = v_hat.to_vec();
        Ok(())
    }

    pub fn snapshot(&self) -> NelaSnapshot {
        let d = self.d;
        let a = self.ridge.a();
        let a_diag_blocks = (0..self.n)
            .map(|u| {
                (0..d)
                    .map(|i| (0..d).map(|j| a[(u * d + i, u * d + j)].as_f64()).collect())
                    .collect()
            })
            .collect();
        let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect();
        NelaSnapshot {
            t: self.t,
            a_diag_blocks,
            log_det_a: self.ridge.log_det().as_f64(),
            theta_hat: f(self.ridge.theta()),
            v_hat: f(&self.v_hat),
            lambda_t: self.support.lambda_t.as_f64(),
            support_j0: self.support.j0.clone(),
            support_j1: self.support.j1.clone(),
            detected: self.detected.iter().copied().collect(),
        }
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.snapshot()).map_err(|e| invalid(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    fn refit_residuals(&mut self) -> Result<()> {
        let c = &self.config;
        let lambda_t = lambda_schedule(self.t, self.n, self.d, c.lambda0)?;
        let fit = lasso_solve_from(
            &self.history,
            lambda_t,
            c.lasso_tol,
            c.lasso_max_sweeps,
            Some(&self.lasso_start),
        )?;
        self.support = two_stage_threshold(&fit.coef, lambda_t);
        self.v_hat = restricted_least_squares(&self.history, &self.support.j1);
        self.detected = users_in_support(&self.support.j1, self.d);
        self.lasso_start = fit.coef;
        Ok(())
    }
}

impl<T: Scalar> Policy<T> for NelaPolicy<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn scores(&self, user: usize, arms: &ArmSet<T>) -> Vec<T> {
        let weights = self.w.column_support(user);
        let p = self.exploitation_vector(&weights, user);
        let form = mixed_block_form(self.ridge.a_inv(), &weights, self.d);
        let alpha = self.alpha();
        arms.iter()
            .map(|x| dot(x, &p) + alpha * form.quad_form(x).max(T::zero()).sqrt())
            .collect()
    }

    fn update(&mut self, user: usize, arm: &[T], reward: T) -> Result<()> {
        if user >= self.n || arm.len() != self.d {
            return Err(invalid(format!("bad observation for user {user}")));
        }
        let d = self.d;
        self.t += 1;
        let weights = self.w.column_support(user);
        let z = mixed_feature_sparse(arm, &weights);

        self.ridge.rank_one_update(&z);
        let residual_part = dot(arm, &self.v_hat[user * d..(user + 1) * d]);
        self.ridge.accumulate(&z, reward - residual_part);
        self.ridge.refresh();

        // Target frozen with the just-updated Θ̂.
        let theta = self.ridge.theta();
        let mut graph_part = T::zero();
        for &(j, wj) in &weights {
            graph_part += wj * dot(arm, &theta[j * d..(j + 1) * d]);
        }
        self.history.push(user, arm, reward - graph_part);

        if self.residuals && self.t > self.warmup && self.t.is_multiple_of(self.config.lasso_every) {
            self.refit_residuals()?;
        }
        Ok(())
    }

    fn detected_anomalies(&self) -> Option<&BTreeSet<usize>> {
        self.residuals.then_some(&self.detected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{inverse_spd, log_det_spd};

    fn half_half() -> InfluenceMatrix<f64> {
        InfluenceMatrix::new(Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]])).unwrap()
    }

    #[test]
    fn identity_graph_feature() {
        let z = mixed_feature(&[1.0, 2.0], 1, &InfluenceMatrix::identity(3));
        assert_eq!(z, vec![0.0, 0.0, 1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn averaged_graph_feature() {
        let z = mixed_feature(&[0.2, -0.4], 0, &half_half());
        assert_eq!(z, vec![0.1, -0.2, 0.1, -0.2]);
    }

    #[test]
    fn alpha_at_start() {
        let cfg = NelaConfig {
            s_v: 2.0,
            ..NelaConfig::<f64>::default()
        };
        let p = NelaPolicy::new(3, InfluenceMatrix::identity(2), cfg.clone()).unwrap();
        let expect = (cfg.sigma + 2.0 * cfg.s_x * cfg.s_v) * (-2.0 * cfg.delta.ln()).sqrt() + cfg.s_theta;
        assert!((p.alpha() - expect).abs() < 1e-12);
    }

    #[test]
    fn alpha_with_unit_delta_and_one_update() {
        let cfg = NelaConfig {
            delta: 1.0,
            s_v: 0.5,
            ..NelaConfig::<f64>::default()
        };
        let mut p = NelaPolicy::new(1, InfluenceMatrix::identity(2), cfg.clone()).unwrap();
        assert!((p.alpha() - cfg.s_theta).abs() < 1e-15);
        // z = (1, 0): log det A = log 2.
        p.update(0, &[1.0], 0.3).unwrap();
        let expect = (cfg.sigma + 2.0 * cfg.s_x * cfg.s_v) * 2f64.ln().sqrt() + cfg.s_theta;
        assert!((p.alpha() - expect).abs() < 1e-12);
    }

    #[test]
    fn warmup_keeps_residual_at_zero() {
        let mut p = NelaPolicy::new(2, InfluenceMatrix::identity(3), NelaConfig::default()).unwrap();
        assert!(p.warmup() > 5);
        for t in 0..5 {
            p.update(t % 3, &[1.0, 0.5], 3.0).unwrap();
            assert!(p.v_hat().iter().all(|&x| x == 0.0));
            assert!(p.detected_anomalies().unwrap().is_empty());
        }
    }

    #[test]
    fn inverse_after_one_update() {
        let w = InfluenceMatrix::new(Matrix::from_rows(&[
            vec![0.5, 0.2, 0.0],
            vec![0.5, 0.8, 0.0],
            vec![0.0, 0.0, 1.0],
        ]))
        .unwrap();
        let mut p = NelaPolicy::new(4, w.clone(), NelaConfig::default()).unwrap();
        let x = [0.3, -0.1, 0.5, 0.2];
        p.update(1, &x, 0.7).unwrap();
        let z = mixed_feature(&x, 1, &w);
        let mut a = Matrix::<f64>::identity(12);
        for i in 0..12 {
            for j in 0..12 {
                a[(i, j)] += z[i] * z[j];
            }
        }
        let dense = inverse_spd(&a).unwrap();
        assert!(p.ridge().a_inv().sub(&dense).frobenius_norm() <= 1e-10);
        assert!((p.ridge().log_det() - log_det_spd(&a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fresh_policy_prefers_longest_arm() {
        let p = NelaPolicy::new(2, half_half(), NelaConfig::default()).unwrap();
        let arms = ArmSet::new(vec![vec![0.3, 0.1], vec![0.0, -0.9], vec![0.5, 0.5]]).unwrap();
        assert_eq!(p.select(0, &arms), 1);
    }

    #[test]
    fn single_arm() {
        let p = NelaPolicy::new(2, half_half(), NelaConfig::default()).unwrap();
        let arms = ArmSet::new(vec![vec![0.3, 0.1]]).unwrap();
        assert_eq!(p.select(1, &arms), 0);
    }

    #[test]
    fn snapshot_serializes() {
        let mut p = NelaPolicy::new(2, half_half(), NelaConfig::default()).unwrap();
        p.update(0, &[1.0, 0.0], 1.0).unwrap();
        let snap = p.snapshot();
        assert_eq!(snap.a_diag_blocks.len(), 2);
        assert_eq!(snap.a_diag_blocks[0][0][0], 1.25);
        let json = serde_json::to_string(&snap).unwrap();
        let back: NelaSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back, snap);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = NelaConfig {
            lasso_every: 0,
            ..NelaConfig::<f64>::default()
        };
        assert!(NelaPolicy::new(2, half_half(), cfg).is_err());
        let cfg = NelaConfig {
            delta: 1.5,
            ..NelaConfig::<f64>::default()
        };
        assert!(NelaPolicy::new(2, half_half(), cfg).is_err());
    }
}
