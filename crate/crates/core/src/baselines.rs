//! Comparison policies: one shared LinUCB, per-user LinUCB, collaborative
//! LinUCB over mixed features, and a Laplacian-smoothed LinUCB.

use crate::environment::ArmSet;
use crate::error::{invalid, Result};
use crate::graph::InfluenceMatrix;
use crate::linalg::{dot, Matrix};
use crate::nela::{NelaConfig, NelaPolicy};
use crate::policy::Policy;
use crate::ridge::{sparse, RidgeModel};
use crate::scalar::Scalar;

/// Constants for the standard self-normalized confidence radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcbParams<T> {
    pub sigma: T,
    pub delta: T,
    pub lambda1: T,
    pub s_theta: T,
}

impl<T: Scalar> UcbParams<T> {
    pub fn from_config(c: &NelaConfig<T>) -> Self {
        Self {
            sigma: c.sigma,
            delta: c.delta,
            lambda1: c.lambda1,
            s_theta: c.s_theta,
        }
    }

    fn radius(&self, model: &RidgeModel<T>) -> T {
        model.confidence_radius(self.sigma, self.lambda1, self.delta, self.s_theta)
    }
}

impl<T: Scalar> Default for UcbParams<T> {
    fn default() -> Self {
        Self::from_config(&NelaConfig::default())
    }
}

fn ucb_scores<T: Scalar>(model: &RidgeModel<T>, radius: T, arms: &ArmSet<T>) -> Vec<T> {
    arms.iter()
        .map(|x| model.predict(x) + radius * model.width(x))
        .collect()
}

/// A single `d`-dimensional LinUCB shared by every user.
#[derive(Debug, Clone)]
pub struct LinUcb<T> {
    model: RidgeModel<T>,
    params: UcbParams<T>,
}

impl<T: Scalar> LinUcb<T> {
    pub fn new(d: usize, params: UcbParams<T>) -> Result<Self> {
        Ok(Self {
            model: RidgeModel::new(d, params.lambda1)?,
            params,
        })
    }

    pub fn model(&self) -> &RidgeModel<T> {
        &self.model
    }
}

impl<T: Scalar> Policy<T> for LinUcb<T> {
    fn name(&self) -> &str {
        "linucb"
    }

    fn scores(&self, _user: usize, arms: &ArmSet<T>) -> Vec<T> {
        ucb_scores(&self.model, self.params.radius(&self.model), arms)
    }

    fn update(&mut self, _user: usize, arm: &[T], reward: T) -> Result<()> {
        self.model.observe_dense(arm, reward);
        Ok(())
    }
}

/// Independent `d`-dimensional LinUCB per user.
#[derive(Debug, Clone)]
pub struct NLinUcb<T> {
    models: Vec<RidgeModel<T>>,
    params: UcbParams<T>,
}

impl<T: Scalar> NLinUcb<T> {
    pub fn new(n: usize, d: usize, params: UcbParams<T>) -> Result<Self> {
        let models = (0..n)
            .map(|_| RidgeModel::new(d, params.lambda1))
            .collect::<Result<_>>()?;
        Ok(Self { models, params })
    }

    pub fn model(&self, user: usize) -> &RidgeModel<T> {
        &self.models[user]
    }
}

impl<T: Scalar> Policy<T> for NLinUcb<T> {
    fn name(&self) -> &str {
        "nlinucb"
    }

    fn scores(&self, user: usize, arms: &ArmSet<T>) -> Vec<T> {
        let m = &self.models[user];
        ucb_scores(m, self.params.radius(m), arms)
    }

    fn update(&mut self, user: usize, arm: &[T], reward: T) -> Result<()> {
        let m = self
            .models
            .get_mut(user)
            .ok_or_else(|| invalid(format!("user {user} out of range")))?;
        m.observe_dense(arm, reward);
        Ok(())
    }
}

/// Collaborative LinUCB: the networked policy with its residual pinned at zero.
pub fn colin<T: Scalar>(d: usize, w: InfluenceMatrix<T>, config: NelaConfig<T>) -> Result<NelaPolicy<T>> {
    NelaPolicy::without_residuals("colin", d, w, config)
}

/// Default ridge added to the Laplacian so the prior is invertible.
pub const GRAPH_PRIOR_EPSILON: f64 = 0.01;

/// `λ₁ · ((L ⊗ I_d) + εI)` where `L = I − D^{-1/2} S D^{-1/2}` is the
/// normalized Laplacian of `S = (W + Wᵀ)/2`.
///
/// `L` is the symmetric form of the random-walk Laplacian `I − D⁻¹S` (same
/// spectrum), so it is positive semidefinite and the prior is positive
/// definite for any `ε > 0`.
pub fn graph_prior<T: Scalar>(w: &InfluenceMatrix<T>, d: usize, lambda1: T, epsilon: T) -> Result<Matrix<T>> {
    if !(epsilon > T::zero()) {
        return Err(invalid(format!(
            "Laplacian prior with epsilon = {epsilon} is singular"
        )));
    }
    let n = w.n();
    let s = Matrix::from_fn(n, n, |i, j| (w.weight(i, j) + w.weight(j, i)) / T::of(2.0));
    let deg: Vec<T> = (0..n).map(|i| s.row(i).iter().copied().sum()).collect();
    let lap = Matrix::from_fn(n, n, |i, j| {
        let norm = if deg[i] > T::zero() && deg[j] > T::zero() {
            s[(i, j)] / (deg[i] * deg[j]).sqrt()
        } else {
            T::zero()
        };
        let id = if i == j { T::one() } else { T::zero() };
        id - norm
    });
    let nd = n * d;
    let mut prior = Matrix::zeros(nd, nd);
    for i in 0..n {
        for j in 0..n {
            let l = (lap[(i, j)] + lap[(j, i)]) / T::of(2.0);
            if l == T::zero() {
                continue;
            }
            for k in 0..d {
                prior[(i * d + k, j * d + k)] = lambda1 * l;
            }
        }
    }
    for i in 0..nd {
        prior[(i, i)] += lambda1 * epsilon;
    }
    Ok(prior)
}

/// LinUCB over per-user blocks with a graph-smoothness prior.
#[derive(Debug, Clone)]
pub struct GraphUcb<T> {
    n: usize,
    d: usize,
    model: RidgeModel<T>,
    params: UcbParams<T>,
}

impl<T: Scalar> GraphUcb<T> {
    pub fn new(d: usize, w: &InfluenceMatrix<T>, epsilon: T, params: UcbParams<T>) -> Result<Self> {
        let prior = graph_prior(w, d, params.lambda1, epsilon)?;
        Ok(Self {
            n: w.n(),
            d,
            model: RidgeModel::with_prior(prior)?,
            params,
        })
    }

    pub fn model(&self) -> &RidgeModel<T> {
        &self.model
    }

    fn block_feature(&self, user: usize, arm: &[T]) -> Vec<(usize, T)> {
        sparse(arm)
            .into_iter()
            .map(|(k, x)| (user * self.d + k, x))
            .collect()
    }
}

impl<T: Scalar> Policy<T> for GraphUcb<T> {
    fn name(&self) -> &str {
        "graphucb"
    }

    fn scores(&self, user: usize, arms: &ArmSet<T>) -> Vec<T> {
        let d = self.d;
        let range = user * d..(user + 1) * d;
        let theta = &self.model.theta()[range.clone()];
        let block = Matrix::from_fn(d, d, |a, b| self.model.a_inv()[(range.start + a, range.start + b)]);
        let radius = self.params.radius(&self.model);
        arms.iter()
            .map(|x| dot(x, theta) + radius * block.quad_form(x).max(T::zero()).sqrt())
            .collect()
    }

    fn update(&mut self, user: usize, arm: &[T], reward: T) -> Result<()> {
        if user >= self.n {
            return Err(invalid(format!("user {user} out of range")));
        }
        let z = self.block_feature(user, arm);
        self.model.observe(&z, reward);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_uniform_graph, complete_edges};

    #[test]
    fn linucb_scalar_estimate() {
        let mut p = LinUcb::new(1, UcbParams::<f64>::default()).unwrap();
        p.update(3, &[1.0], 1.0).unwrap();
        assert!((p.model().theta()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nlinucb_isolates_users() {
        let mut p = NLinUcb::new(2, 2, UcbParams::<f64>::default()).unwrap();
        p.update(0, &[1.0, 0.5], 2.0).unwrap();
        assert_eq!(p.model(1).theta(), &[0.0, 0.0]);
        assert!(p.model(0).theta()[0] > 0.0);
        assert!(p.update(2, &[1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn prior_is_symmetric_and_definite() {
        let w = build_uniform_graph::<f64>(&crate::graph::star_edges(4, 0), 4).unwrap();
        let prior = graph_prior(&w, 2, 1.0, 0.01).unwrap();
        assert_eq!(prior.sub(&prior.transpose()).frobenius_norm(), 0.0);
        assert!(crate::linalg::cholesky(&prior).is_ok());
    }

    #[test]
    fn zero_epsilon_is_rejected() {
        let w = build_uniform_graph::<f64>(&complete_edges(3), 3).unwrap();
        assert!(GraphUcb::new(2, &w, 0.0, UcbParams::default()).is_err());
    }

    #[test]
    fn graphucb_touches_only_user_block_in_b() {
        let w = build_uniform_graph::<f64>(&complete_edges(3), 3).unwrap();
        let mut p = GraphUcb::new(2, &w, 0.01, UcbParams::default()).unwrap();
        p.update(1, &[1.0, 0.0], 1.0).unwrap();
        assert_eq!(p.model().b(), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        // The smoothing prior spreads the estimate to the neighbours.
        assert!(p.model().theta()[0] > 0.0);
    }
}
