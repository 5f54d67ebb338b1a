//! Collaborative contextual bandits over a user-influence graph with
//! simultaneous anomaly detection.
//!
//! Each user's payoff parameter is a graph-weighted mix of all users'
//! preference vectors plus a per-user residual. [`NelaPolicy`] learns the
//! preferences by ridge regression on graph-mixed features and recovers the
//! sparse residuals by a thresholded Lasso, flagging users with a nonzero
//! residual as anomalous. The [`baselines`] module holds the comparison
//! policies and [`environment`] the simulator.
//!
//! Estimators are generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the precision the simulator runs at.

// `!(x > 0)` also rejects NaN; index loops read closer to the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod environment;
pub mod error;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod nela;
pub mod policy;
pub mod ridge;
pub mod scalar;
pub mod sparse_regression;

pub use baselines::{GraphUcb, LinUcb, NLinUcb, UcbParams};
pub use environment::{ArmSet, GroundTruth, RoundRecord};
pub use error::{NelaError, Result};
pub use graph::InfluenceMatrix;
pub use linalg::Matrix;
pub use metrics::{Aggregate, MetricsLog};
pub use nela::{NelaConfig, NelaPolicy, NelaSnapshot};
pub use policy::Policy;
pub use ridge::RidgeModel;
pub use scalar::Scalar;
pub use sparse_regression::{RegressionHistory, SupportEstimate};

pub type Matrix64 = Matrix<f64>;
pub type Influence64 = InfluenceMatrix<f64>;
pub type GroundTruth64 = GroundTruth<f64>;
pub type ArmSet64 = ArmSet<f64>;
pub type Nela64 = NelaPolicy<f64>;
pub type NelaConfig64 = NelaConfig<f64>;
pub type Nela32 = NelaPolicy<f32>;
pub type NelaConfig32 = NelaConfig<f32>;
pub type LinUcb64 = LinUcb<f64>;
pub type NLinUcb64 = NLinUcb<f64>;
pub type GraphUcb64 = GraphUcb<f64>;
pub type DynPolicy64 = Box<dyn Policy<f64>>;
