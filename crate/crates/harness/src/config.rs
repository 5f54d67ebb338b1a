//! Experiment configuration.
//!
//! A config file is flat TOML whose keys are the field names below; every key
//! is optional and falls back to the defaults of [`ExperimentConfig::for_scenario`].
//! Command-line flags are applied on top of the file.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    ToyStar,
    ToyFull,
    Synthetic,
    Sweep,
    Replay,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::ToyStar => "toy-star",
            Scenario::ToyFull => "toy-full",
            Scenario::Synthetic => "synthetic",
            Scenario::Sweep => "sweep",
            Scenario::Replay => "replay",
        }
    }

    pub fn is_toy(self) -> bool {
        matches!(self, Scenario::ToyStar | Scenario::ToyFull)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Nela,
    Colin,
    Graphucb,
    Nlinucb,
    Linucb,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Nela,
        PolicyKind::Colin,
        PolicyKind::Graphucb,
        PolicyKind::Nlinucb,
        PolicyKind::Linucb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Nela => "nela",
            PolicyKind::Colin => "colin",
            PolicyKind::Graphucb => "graphucb",
            PolicyKind::Nlinucb => "nlinucb",
            PolicyKind::Linucb => "linucb",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim())
            .ok_or_else(|| HarnessError::Validation(format!("unknown policy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub d: usize,
    /// Arms offered per round (M).
    pub arms: usize,
    pub horizon: usize,
    pub sigma: f64,
    pub delta: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    /// Anomaly residual norm; `0` draws raw residuals (synthetic/replay) or
    /// disables the anomaly (toy). Several values only for sweeps.
    pub gamma: Vec<f64>,
    pub nonzero_dims: Vec<usize>,
    pub anomalies: usize,
    pub keep_fraction: f64,
    /// Pairwise correlation ρ² between arms.
    pub arm_correlation: f64,
    pub policies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub lasso_every: usize,
    pub warmup: Option<usize>,
    /// Residual norm bound; defaults to `10·√anomalies`.
    pub s_v: Option<f64>,
    pub graph_epsilon: f64,
    /// Optional adjacency list replacing the built-in toy graph.
    pub edges: Option<PathBuf>,
    pub user_features: Option<PathBuf>,
    pub item_features: Option<PathBuf>,
    /// Write the final policy state and residual-regression dump per seed.
    pub dump_state: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_scenario(Scenario::Synthetic)
    }
}

impl ExperimentConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        let mut cfg = Self {
            scenario,
            n: 50,
            d: 10,
            arms: 50,
            horizon: 1000,
            sigma: 0.01,
            delta: 0.001,
            lambda0: 0.02,
            lambda1: 1.0,
            gamma: vec![0.0],
            nonzero_dims: vec![1],
            anomalies: 3,
            keep_fraction: 0.3,
            arm_correlation: 0.7,
            policies: PolicyKind::ALL.to_vec(),
            seeds: (1..=10).collect(),
            out: PathBuf::from("runs"),
            lasso_every: 1,
            warmup: None,
            s_v: None,
            graph_epsilon: 0.01,
            edges: None,
            user_features: None,
            item_features: None,
            dump_state: false,
        };
        match scenario {
            Scenario::ToyStar | Scenario::ToyFull => {
                cfg.n = 4;
                cfg.anomalies = 1;
                cfg.horizon = 500;
            }
            Scenario::Sweep => {
                cfg.n = 20;
                cfg.horizon = 1500;
                cfg.gamma = vec![2.0, 5.0, 10.0];
                cfg.nonzero_dims = vec![1, 2, 3];
                cfg.policies = vec![PolicyKind::Nela];
            }
            Scenario::Replay => {
                cfg.n = 100;
                cfg.anomalies = 5;
            }
            Scenario::Synthetic => {}
        }
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(config_error)
    }

    /// Parses a config file whose missing keys take the defaults of its
    /// scenario; `scenario` (if given) replaces the file's own.
    pub fn from_toml_for(text: &str, scenario: Option<Scenario>) -> Result<Self, HarnessError> {
        let file = parse_table(text)?;
        let scenario = match scenario {
            Some(s) => s,
            None => declared_scenario(&file)?.unwrap_or(Scenario::Synthetic),
        };
        let mut merged = toml::Table::try_from(Self::for_scenario(scenario)).expect("config serializes");
        merged.extend(file);
        merged.insert("scenario".into(), toml::Value::String(scenario.as_str().into()));
        toml::Value::Table(merged).try_into().map_err(config_error)
    }

    /// The `scenario` key of a config file, if present.
    pub fn scenario_in(text: &str) -> Result<Option<Scenario>, HarnessError> {
        declared_scenario(&parse_table(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// `(gamma, nonzero_dims)` cells; a single cell unless this is a sweep.
    pub fn cells(&self) -> Vec<(f64, usize)> {
        if self.scenario == Scenario::Sweep {
            self.gamma
                .iter()
                .flat_map(|&g| self.nonzero_dims.iter().map(move |&k| (g, k)))
                .collect()
        } else {
            vec![(self.gamma[0], self.nonzero_dims[0])]
        }
    }

    /// Anomalous users actually planted per seed.
    pub fn planted_anomalies(&self, gamma: f64) -> usize {
        if self.scenario.is_toy() {
            usize::from(gamma > 0.0)
        } else {
            self.anomalies
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Validation(m));
        if self.horizon == 0 {
            return fail("horizon must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.policies.is_empty() {
            return fail("at least one policy is required".into());
        }
        if self.n == 0 || self.d == 0 || self.arms == 0 {
            return fail("n, d and arms must be positive".into());
        }
        if self.gamma.is_empty() || self.nonzero_dims.is_empty() {
            return fail("gamma and nonzero_dims need at least one value".into());
        }
        if self.gamma.iter().any(|&g| !(g >= 0.0 && g.is_finite())) {
            return fail("gamma values must be finite and nonnegative".into());
        }
        if self.nonzero_dims.iter().any(|&k| k == 0 || k > self.d) {
            return fail(format!("nonzero_dims must lie in 1..={}", self.d));
        }
        if self.scenario != Scenario::Sweep && (self.gamma.len() > 1 || self.nonzero_dims.len() > 1) {
            return fail("gamma/nonzero_dims lists are only allowed for sweeps".into());
        }
        if !self.scenario.is_toy() && self.anomalies > self.n {
            return fail(format!("anomalies {} exceed n={}", self.anomalies, self.n));
        }
        if !(self.sigma >= 0.0) || !(self.lambda1 > 0.0) || !(self.lambda0 >= 0.0) {
            return fail("sigma, lambda0 must be nonnegative and lambda1 positive".into());
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return fail("delta must lie in (0, 1]".into());
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return fail("keep_fraction must lie in (0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.arm_correlation) {
            return fail("arm_correlation must lie in [0, 1)".into());
        }
        if self.lasso_every == 0 {
            return fail("lasso_every must be at least 1".into());
        }
        if self.scenario == Scenario::Replay && (self.user_features.is_none() || self.item_features.is_none()) {
            return fail("replay needs user_features and item_features".into());
        }
        if self.policies.contains(&PolicyKind::Nela) && self.n * self.d <= 1 {
            return fail("nela needs n·d > 1".into());
        }
        Ok(())
    }
}

fn config_error(e: toml::de::Error) -> HarnessError {
    HarnessError::Validation(format!("config: {e}"))
}

fn parse_table(text: &str) -> Result<toml::Table, HarnessError> {
    text.parse().map_err(config_error)
}

fn declared_scenario(file: &toml::Table) -> Result<Option<Scenario>, HarnessError> {
    file.get("scenario")
        .map(|v| v.clone().try_into().map_err(config_error))
        .transpose()
}

/// Parses `1,2,5` or an inclusive range `1..10`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = || HarnessError::Validation(format!("bad seed list {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}
