use std::collections::BTreeSet;

use crate::environment::ArmSet;
use crate::error::Result;
use crate::scalar::Scalar;

/// Shared interface of every bandit policy in the crate.
pub trait Policy<T: Scalar>: Send {
    fn name(&self) -> &str;

    /// Upper-confidence score of every arm for `user`.
    fn scores(&self, user: usize, arms: &ArmSet<T>) -> Vec<T>;

    /// Index of the highest-scoring arm, lowest index on ties.
    fn select(&self, user: usize, arms: &ArmSet<T>) -> usize {
        argmax(&self.scores(user, arms))
    }

    fn update(&mut self, user: usize, arm: &[T], reward: T) -> Result<()>;

    /// Users currently flagged as anomalous, for policies that detect them.
    fn detected_anomalies(&self) -> Option<&BTreeSet<usize>> {
        None
    }
}

/// First index of the maximum; NaN scores never win.
pub fn argmax<T: Scalar>(scores: &[T]) -> usize {
    let mut best = 0;
    let mut best_score = T::neg_infinity();
    for (i, &s) in scores.iter().enumerate() {
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}
