//! Networked bandit simulator with planted anomalies.
//!
//! The payoff of arm `x` for user `u` is `xᵀ (ΘW + V)(:, u) + η`, with `Θ`
//! holding unit-norm user preferences, `W` the influence matrix and `V` a
//! column-sparse residual matrix that is nonzero only for anomalous users.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{invalid, NelaError, Result};
use crate::graph::InfluenceMatrix;
use crate::io::{read_matrix_csv, write_matrix_csv};
use crate::linalg::{dot, norm2, Matrix};
use crate::scalar::Scalar;

/// Hidden parameters driving the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T> {
    /// `d × n`, unit-norm columns.
    pub theta: Matrix<T>,
    /// `d × n`, zero outside anomalous columns.
    pub v: Matrix<T>,
    pub anomalies: BTreeSet<usize>,
    /// Smallest anomalous residual norm (0 when there are no anomalies).
    pub gamma: T,
}

impl<T: Scalar> GroundTruth<T> {
    pub fn n(&self) -> usize {
        self.theta.cols()
    }

    pub fn d(&self) -> usize {
        self.theta.rows()
    }

    /// Anomaly-free ground truth.
    pub fn without_anomalies(theta: Matrix<T>) -> Self {
        let v = Matrix::zeros(theta.rows(), theta.cols());
        Self {
            theta,
            v,
            anomalies: BTreeSet::new(),
            gamma: T::zero(),
        }
    }

    /// Plants residuals on the given users.
    ///
    /// Each anomalous user gets `nonzero_dims` distinct random coordinates
    /// drawn from `U(-10, 10)`. With `gamma_target > 0` the residual is then
    /// rescaled to exactly that norm; `gamma_target == 0` keeps the raw draw.
    pub fn with_planted_anomalies<R: Rng + ?Sized>(
        theta: Matrix<T>,
        users: &[usize],
        gamma_target: T,
        nonzero_dims: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (d, n) = (theta.rows(), theta.cols());
        if !users.is_empty() && nonzero_dims == 0 {
            return Err(invalid("anomalies need at least one nonzero dimension"));
        }
        if nonzero_dims > d {
            return Err(invalid(format!("nonzero_dims {nonzero_dims} exceeds d={d}")));
        }
        if gamma_target < T::zero() {
            return Err(invalid("gamma target must be nonnegative"));
        }
        let mut v = Matrix::zeros(d, n);
        let mut anomalies = BTreeSet::new();
        let mut gamma = T::infinity();
        let coord = Uniform::new(-10.0f64, 10.0).expect("valid range");
        for &u in users {
            if u >= n {
                return Err(invalid(format!("anomalous user {u} out of range for n={n}")));
            }
            let mut col = vec![T::zero(); d];
            for k in sample(rng, d, nonzero_dims) {
                col[k] = T::of(coord.sample(rng));
            }
            let norm = norm2(&col);
            if gamma_target > T::zero() && norm > T::zero() {
                for x in &mut col {
                    *x = *x * gamma_target / norm;
                }
            }
            let norm = norm2(&col);
            gamma = gamma.min(norm);
            v.set_column(u, &col);
            anomalies.insert(u);
        }
        if anomalies.is_empty() {
            gamma = T::zero();
        }
        Ok(Self {
            theta,
            v,
            anomalies,
            gamma,
        })
    }

    /// Checks unit-norm preferences and the residual/anomaly-set agreement.
    pub fn validate(&self) -> Result<()> {
        let (d, n) = (self.d(), self.n());
        if self.v.rows() != d || self.v.cols() != n {
            return Err(invalid("theta and v shapes differ"));
        }
        for j in 0..n {
            let norm = norm2(&self.theta.column(j));
            if (norm - T::one()).abs() > T::of(1e-9).max(T::epsilon() * T::of(64.0)) {
                return Err(invalid(format!("theta column {j} has norm {norm}")));
            }
            let vn = norm2(&self.v.column(j));
            if self.anomalies.contains(&j) {
                if vn < self.gamma || vn == T::zero() {
                    return Err(invalid(format!("anomalous user {j} has residual norm {vn}")));
                }
            } else if vn != T::zero() {
                return Err(invalid(format!("normal user {j} has nonzero residual")));
            }
        }
        Ok(())
    }

    /// Effective payoff parameters `ΘW + V` (`d × n`).
    pub fn effective_parameters(&self, w: &InfluenceMatrix<T>) -> Matrix<T> {
        let mut p = self.theta.matmul(w.matrix());
        for i in 0..self.d() {
            for j in 0..self.n() {
                p[(i, j)] += self.v[(i, j)];
            }
        }
        p
    }

    /// Writes `theta.csv`, `v.csv` and `anomalies.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_matrix_csv(&dir.join("theta.csv"), &self.theta)?;
        write_matrix_csv(&dir.join("v.csv"), &self.v)?;
        let ids: String = self.anomalies.iter().map(|u| format!("{u}\n")).collect();
        fs::write(dir.join("anomalies.csv"), ids)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let theta: Matrix<T> = read_matrix_csv(&dir.join("theta.csv"))?;
        let v: Matrix<T> = read_matrix_csv(&dir.join("v.csv"))?;
        let path = dir.join("anomalies.csv");
        let mut anomalies = BTreeSet::new();
        for (i, line) in fs::read_to_string(&path)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let id = line.parse().map_err(|_| NelaError::Load {
                path: path.clone(),
                message: format!("line {}: bad user id {line:?}", i + 1),
            })?;
            anomalies.insert(id);
        }
        let gamma = anomalies
            .iter()
            .map(|&u| norm2(&v.column(u)))
            .fold(T::infinity(), T::min);
        let gt = Self {
            theta,
            v,
            gamma: if anomalies.is_empty() { T::zero() } else { gamma },
            anomalies,
        };
        gt.validate().map_err(|e| NelaError::Load {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(gt)
    }
}

/// Draws `n` i.i.d. standard-normal `d`-vectors and normalizes them to unit norm.
pub fn random_unit_columns<T: Scalar, R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Matrix<T> {
    let mut theta = Matrix::zeros(d, n);
    for j in 0..n {
        let col: Vec<f64> = loop {
            let c: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            if c.iter().any(|&x| x != 0.0) {
                break c;
            }
        };
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        let col: Vec<T> = col.iter().map(|x| T::of(x / norm)).collect();
        theta.set_column(j, &col);
    }
    theta
}

/// Synthetic ground truth: Gaussian unit-norm preferences and
/// `anomaly_count` uniformly chosen anomalous users.
pub fn generate_ground_truth<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    d: usize,
    anomaly_count: usize,
    gamma_target: T,
    nonzero_dims: usize,
    rng: &mut R,
) -> Result<GroundTruth<T>> {
    if anomaly_count > n {
        return Err(invalid(format!("anomaly count {anomaly_count} exceeds n={n}")));
    }
    if anomaly_count > 0 && nonzero_dims == 0 {
        return Err(invalid("anomalies need at least one nonzero dimension"));
    }
    let theta = random_unit_columns(d, n, rng);
    let mut users = sample(rng, n, anomaly_count).into_vec();
    users.sort_unstable();
    GroundTruth::with_planted_anomalies(theta, &users, gamma_target, nonzero_dims, rng)
}

/// The candidate context vectors offered in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSet<T> {
    arms: Vec<Vec<T>>,
}

impl<T: Scalar> ArmSet<T> {
    pub fn new(arms: Vec<Vec<T>>) -> Result<Self> {
        let d = arms.first().map(Vec::len).ok_or_else(|| invalid("arm set is empty"))?;
        if arms.iter().any(|a| a.len() != d) {
            return Err(invalid("arms have different dimensions"));
        }
        Ok(Self { arms })
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.arms[0].len()
    }

    pub fn arm(&self, i: usize) -> &[T] {
        &self.arms[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.arms.iter().map(Vec::as_slice)
    }

    /// Rescales arms longer than one to unit norm; shorter ones are untouched.
    pub fn clip_to_unit_ball(mut self) -> Self {
        for arm in &mut self.arms {
            let norm = norm2(arm);
            if norm > T::one() {
                for x in arm.iter_mut() {
                    *x /= norm;
                }
            }
        }
        self
    }
}

/// Equicorrelated Gaussian arms before norm clipping.
///
/// For each of the `d` coordinates, an `M`-vector with unit variances and
/// pairwise covariance `correlation` is drawn as `√c·z₀ + √(1−c)·z_m`; arm `m`
/// takes its entry from each of those vectors.
pub fn sample_raw_arm_set<T: Scalar, R: Rng + ?Sized>(
    arms: usize,
    d: usize,
    correlation: f64,
    rng: &mut R,
) -> Result<ArmSet<T>> {
    if arms == 0 || d == 0 {
        return Err(invalid("arm set needs M >= 1 and d >= 1"));
    }
    if !(0.0..1.0).contains(&correlation) {
        return Err(invalid(format!("arm correlation {correlation} not in [0, 1)")));
    }
    let shared = correlation.sqrt();
    let own = (1.0 - correlation).sqrt();
    let mut out = vec![vec![T::zero(); d]; arms];
    for k in 0..d {
        let z0: f64 = StandardNormal.sample(rng);
        for arm in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            arm[k] = T::of(shared * z0 + own * z);
        }
    }
    ArmSet::new(out)
}

/// Equicorrelated Gaussian arms clipped into the unit ball.
pub fn sample_arm_set<T: Scalar, R: Rng + ?Sized>(
    arms: usize,
    d: usize,
    correlation: f64,
    rng: &mut R,
) -> Result<ArmSet<T>> {
    Ok(sample_raw_arm_set(arms, d, correlation, rng)?.clip_to_unit_ball())
}

/// Uniformly random arriving user.
pub fn sample_user<R: Rng + ?Sized>(n: usize, rng: &mut R) -> usize {
    rng.random_range(0..n)
}

/// Noiseless payoff `xᵀ (ΘW + V)(:, user)`.
pub fn expected_reward<T: Scalar>(gt: &GroundTruth<T>, w: &InfluenceMatrix<T>, user: usize, arm: &[T]) -> T {
    let mut r = dot(arm, &gt.v.column(user));
    for (j, wj) in w.column_support(user) {
        r += wj * dot(arm, &gt.theta.column(j));
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord<T> {
    pub t: usize,
    pub user: usize,
    pub arm_set: ArmSet<T>,
    pub chosen_arm: usize,
    pub reward: T,
    pub optimal_reward: T,
    pub instant_regret: T,
}

/// Plays one round with Gaussian noise of standard deviation `sigma`.
#[allow(clippy::too_many_arguments)]
pub fn play_round<T: Scalar, R: Rng + ?Sized>(
    t: usize,
    gt: &GroundTruth<T>,
    w: &InfluenceMatrix<T>,
    arm_set: ArmSet<T>,
    user: usize,
    chosen_arm: usize,
    sigma: T,
    rng: &mut R,
) -> RoundRecord<T> {
    let z: f64 = StandardNormal.sample(rng);
    let noise = sigma * T::of(z);
    let expected: Vec<T> = arm_set.iter().map(|x| expected_reward(gt, w, user, x)).collect();
    let optimal_reward = expected.iter().copied().fold(T::neg_infinity(), T::max);
    let instant_regret = optimal_reward - expected[chosen_arm];
    debug_assert!(instant_regret >= T::of(-1e-12));
    RoundRecord {
        t,
        user,
        reward: expected[chosen_arm] + noise,
        optimal_reward,
        instant_regret: instant_regret.max(T::zero()),
        arm_set,
        chosen_arm,
    }
}

/// Loads a `d × k` feature matrix whose columns should be unit vectors.
///
/// Columns within `1e-6` of unit norm are renormalized; others are rejected.
pub fn load_feature_matrix<T: Scalar>(path: &Path) -> Result<Matrix<T>> {
    let mut m: Matrix<T> = read_matrix_csv(path)?;
    for j in 0..m.cols() {
        let col = m.column(j);
        let norm = norm2(&col);
        if (norm - T::one()).abs() > T::of(1e-6) {
            return Err(NelaError::Load {
                path: path.to_path_buf(),
                message: format!("column {j} has norm {norm}, expected 1"),
            });
        }
        // Already unit up to rounding: keep the bits so exports round-trip.
        if (norm - T::one()).abs() <= T::of(4.0) * T::epsilon() {
            continue;
        }
        let col: Vec<T> = col.iter().map(|&x| x / norm).collect();
        m.set_column(j, &col);
    }
    Ok(m)
}
