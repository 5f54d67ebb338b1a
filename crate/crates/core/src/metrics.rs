//! Regret and detection metrics, per run and across seeds.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, NelaError, Result};

pub const LOG_HEADER: &str = "t,instant_regret,cum_regret,precision,recall,detected_count";

/// Detection precision and recall.
///
/// An empty detection set has precision 1; an empty truth set has recall 1.
pub fn precision_recall(detected: &BTreeSet<usize>, truth: &BTreeSet<usize>) -> (f64, f64) {
    let hits = detected.intersection(truth).count() as f64;
    let precision = if detected.is_empty() {
        1.0
    } else {
        hits / detected.len() as f64
    };
    let recall = if truth.is_empty() {
        1.0
    } else {
        hits / truth.len() as f64
    };
    (precision, recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub t: usize,
    pub instant_regret: f64,
    pub cum_regret: f64,
    pub precision: f64,
    pub recall: f64,
    pub detected_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub policy: String,
    pub seed: u64,
    pub rounds: Vec<RoundMetrics>,
}

impl MetricsLog {
    pub fn new(policy: impl Into<String>, seed: u64) -> Self {
        Self {
            policy: policy.into(),
            seed,
            rounds: Vec::new(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.rounds.len()
    }

    pub fn cum_regret(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cum_regret)
    }

    /// Appends round `t = len + 1`. Policies without detection pass `None`,
    /// which is scored as an empty detection set.
    pub fn record(&mut self, instant_regret: f64, detected: Option<&BTreeSet<usize>>, truth: &BTreeSet<usize>) {
        let empty = BTreeSet::new();
        let detected = detected.unwrap_or(&empty);
        let (precision, recall) = precision_recall(detected, truth);
        let instant_regret = instant_regret.max(0.0);
        self.rounds.push(RoundMetrics {
            t: self.rounds.len() + 1,
            instant_regret,
            cum_regret: self.cum_regret() + instant_regret,
            precision,
            recall,
            detected_count: detected.len(),
        });
    }

    pub fn cumulative_curve(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.cum_regret).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{LOG_HEADER}")?;
        for r in &self.rounds {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.t, r.instant_regret, r.cum_regret, r.precision, r.recall, r.detected_count
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, policy: &str, seed: u64) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != LOG_HEADER {
            return Err(NelaError::Load {
                path: path.to_path_buf(),
                message: format!("unexpected header {:?}", header.join(",")),
            });
        }
        let mut log = Self::new(policy, seed);
        for row in reader.deserialize() {
            let r: RoundMetrics = row.map_err(|e| NelaError::Load {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            log.rounds.push(r);
        }
        Ok(log)
    }
}

/// Pointwise mean and standard error of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

fn mean_se(xs: &[f64]) -> MeanSe {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return MeanSe { mean, se: 0.0 };
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    MeanSe {
        mean,
        se: (var / k).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub t: usize,
    pub instant_regret: MeanSe,
    pub cum_regret: MeanSe,
    pub precision: MeanSe,
    pub recall: MeanSe,
    pub detected_count: MeanSe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub policy: String,
    pub seeds: usize,
    pub rows: Vec<AggregateRow>,
}

/// Mean and standard error across replications, round by round.
///
/// The result does not depend on the order of `logs`: each round's values are
/// sorted before summation.
pub fn aggregate(logs: &[MetricsLog]) -> Result<Aggregate> {
    let first = logs.first().ok_or_else(|| invalid("nothing to aggregate"))?;
    let horizon = first.horizon();
    for log in logs {
        if log.horizon() != horizon {
            return Err(invalid(format!(
                "horizon mismatch: seed {} has {} rounds, expected {horizon}",
                log.seed,
                log.horizon()
            )));
        }
        if log.policy != first.policy {
            return Err(invalid(format!(
                "policy mismatch: {} vs {}",
                log.policy, first.policy
            )));
        }
    }
    let column = |t: usize, f: &dyn Fn(&RoundMetrics) -> f64| {
        let mut xs: Vec<f64> = logs.iter().map(|l| f(&l.rounds[t])).collect();
        xs.sort_by(f64::total_cmp);
        mean_se(&xs)
    };
    let rows = (0..horizon)
        .map(|t| AggregateRow {
            t: t + 1,
            instant_regret: column(t, &|r| r.instant_regret),
            cum_regret: column(t, &|r| r.cum_regret),
            precision: column(t, &|r| r.precision),
            recall: column(t, &|r| r.recall),
            detected_count: column(t, &|r| r.detected_count as f64),
        })
        .collect();
    Ok(Aggregate {
        policy: first.policy.clone(),
        seeds: logs.len(),
        rows,
    })
}

pub const AGGREGATE_HEADER: &str = "policy,t,instant_regret_mean,instant_regret_se,cum_regret_mean,cum_regret_se,\
precision_mean,precision_se,recall_mean,recall_se,detected_count_mean,detected_count_se";

impl Aggregate {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{AGGREGATE_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                self.policy,
                r.t,
                r.instant_regret.mean,
                r.instant_regret.se,
                r.cum_regret.mean,
                r.cum_regret.se,
                r.precision.mean,
                r.precision.se,
                r.recall.mean,
                r.recall.se,
                r.detected_count.mean,
                r.detected_count.se
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn final_row(&self) -> Option<&AggregateRow> {
        self.rows.last()
    }

    pub fn mean_cumulative_curve(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cum_regret.mean).collect()
    }
}

/// Least-squares slope of `ln(cum regret)` against `ln t` over the second
/// half of the horizon. Returns `None` when fewer than two usable points exist.
pub fn growth_exponent(cum_regret: &[f64]) -> Option<f64> {
    let horizon = cum_regret.len();
    let start = (horizon / 2).max(1);
    let pts: Vec<(f64, f64)> = (start..=horizon)
        .filter_map(|t| {
            let r = cum_regret[t - 1];
            (r > 0.0).then(|| ((t as f64).ln(), r.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
