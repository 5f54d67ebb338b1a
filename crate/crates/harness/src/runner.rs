//! Scenario construction and the paired simulation loop.
//!
//! Every seed gets two ChaCha streams: stream 1 builds the world (preferences,
//! residuals, graph) and stream 2 drives the rounds (users, arm sets, noise).
//! All policies of a seed replay the same round stream, and nothing depends on
//! the worker that executes a replication.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nela_core::baselines::{colin, GraphUcb, LinUcb, NLinUcb, UcbParams};
use nela_core::environment::{
    generate_ground_truth, load_feature_matrix, play_round, random_unit_columns, sample_arm_set, sample_user,
};
use nela_core::graph::{build_similarity_graph, build_uniform_graph, complete_edges, star_edges};
use nela_core::io::{read_edge_list, write_matrix_csv};
use nela_core::metrics::{aggregate, growth_exponent};
use nela_core::{
    Aggregate, ArmSet64, DynPolicy64, GroundTruth64, Influence64, Matrix64, MetricsLog, Nela64, NelaConfig64,
    Policy,
};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, PolicyKind, Scenario};
use crate::{default_workers, HarnessError};

type Result<T, E = HarnessError> = std::result::Result<T, E>;

const WORLD_STREAM: u64 = 1;
const ROUND_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// User preferences (`d × n`) and item catalog (`d × K`) for replays.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayData {
    pub users: Matrix64,
    pub items: Matrix64,
}

impl ReplayData {
    pub fn new(users: Matrix64, items: Matrix64) -> Result<Self> {
        if users.rows() != items.rows() {
            return Err(HarnessError::Validation(format!(
                "feature dimension mismatch: users have d={}, items have d={}",
                users.rows(),
                items.rows()
            )));
        }
        Ok(Self { users, items })
    }

    pub fn load(user_path: &Path, item_path: &Path) -> Result<Self> {
        Self::new(load_feature_matrix(user_path)?, load_feature_matrix(item_path)?)
    }
}

/// Everything fixed for one seed and shared by all of its policies.
#[derive(Debug, Clone)]
pub struct World {
    pub truth: GroundTruth64,
    pub graph: Influence64,
    /// Item catalog for replays.
    pub catalog: Option<Arc<ReplayData>>,
}

pub fn build_world(
    cfg: &ExperimentConfig,
    gamma: f64,
    nonzero_dims: usize,
    seed: u64,
    replay: Option<&Arc<ReplayData>>,
) -> Result<World> {
    let mut rng = stream(seed, WORLD_STREAM);
    let (n, d) = (cfg.n, cfg.d);
    let world = match cfg.scenario {
        Scenario::ToyStar | Scenario::ToyFull => {
            let edges = match &cfg.edges {
                Some(path) => read_edge_list(path)?,
                None if cfg.scenario == Scenario::ToyStar => star_edges(n, 0),
                None => complete_edges(n),
            };
            let graph = build_uniform_graph(&edges, n)?;
            let theta = random_unit_columns(d, n, &mut rng);
            let users: &[usize] = if gamma > 0.0 { &[0] } else { &[] };
            let truth = GroundTruth64::with_planted_anomalies(theta, users, gamma, nonzero_dims, &mut rng)?;
            World {
                truth,
                graph,
                catalog: None,
            }
        }
        Scenario::Synthetic | Scenario::Sweep => {
            let truth = generate_ground_truth(n, d, cfg.anomalies, gamma, nonzero_dims, &mut rng)?;
            let graph = build_similarity_graph(&truth.theta, cfg.keep_fraction)?;
            World {
                truth,
                graph,
                catalog: None,
            }
        }
        Scenario::Replay => {
            let data = replay.ok_or_else(|| HarnessError::Validation("replay needs feature files".into()))?;
            let mut users = sample(&mut rng, n, cfg.anomalies).into_vec();
            users.sort_unstable();
            let truth =
                GroundTruth64::with_planted_anomalies(data.users.clone(), &users, gamma, nonzero_dims, &mut rng)?;
            let graph = build_similarity_graph(&truth.theta, cfg.keep_fraction)?;
            World {
                truth,
                graph,
                catalog: Some(Arc::clone(data)),
            }
        }
    };
    Ok(world)
}

/// Users and arm sets for successive rounds; noise is drawn from the same
/// generator by [`play_round`].
struct RoundSource<'a> {
    rng: ChaCha8Rng,
    cfg: &'a ExperimentConfig,
    items: Option<&'a Matrix64>,
}

impl RoundSource<'_> {
    fn next(&mut self) -> Result<(usize, ArmSet64)> {
        let user = sample_user(self.cfg.n, &mut self.rng);
        let arms = match self.items {
            None => sample_arm_set(self.cfg.arms, self.cfg.d, self.cfg.arm_correlation, &mut self.rng)?,
            Some(items) => {
                let picked = sample(&mut self.rng, items.cols(), self.cfg.arms);
                ArmSet64::new(picked.iter().map(|j| items.column(j)).collect())?
            }
        };
        Ok((user, arms))
    }
}

pub fn nela_config(cfg: &ExperimentConfig, planted: usize) -> NelaConfig64 {
    let mut c = NelaConfig64::with_anomaly_count(planted);
    c.lambda0 = cfg.lambda0;
    c.lambda1 = cfg.lambda1;
    c.sigma = cfg.sigma;
    c.delta = cfg.delta;
    c.warmup_rounds = cfg.warmup;
    c.lasso_every = cfg.lasso_every;
    if let Some(s_v) = cfg.s_v {
        c.s_v = s_v;
    }
    c
}

enum Agent {
    Networked(Box<Nela64>),
    Other(DynPolicy64),
}

impl Agent {
    fn policy(&mut self) -> &mut dyn Policy<f64> {
        match self {
            Agent::Networked(p) => p.as_mut(),
            Agent::Other(p) => p.as_mut(),
        }
    }
}

fn make_agent(kind: PolicyKind, cfg: &ExperimentConfig, world: &World, planted: usize) -> Result<Agent> {
    let nc = nela_config(cfg, planted);
    let params = UcbParams::from_config(&nc);
    let d = cfg.d;
    Ok(match kind {
        PolicyKind::Nela => Agent::Networked(Box::new(Nela64::new(d, world.graph.clone(), nc)?)),
        PolicyKind::Colin => Agent::Networked(Box::new(colin(d, world.graph.clone(), nc)?)),
        PolicyKind::Graphucb => Agent::Other(Box::new(GraphUcb::new(d, &world.graph, cfg.graph_epsilon, params)?)),
        PolicyKind::Nlinucb => Agent::Other(Box::new(NLinUcb::new(cfg.n, d, params)?)),
        PolicyKind::Linucb => Agent::Other(Box::new(LinUcb::new(d, params)?)),
    })
}

/// One replication; also returns the final networked state when requested.
pub fn run_single(
    cfg: &ExperimentConfig,
    world: &World,
    kind: PolicyKind,
    seed: u64,
    planted: usize,
) -> Result<(MetricsLog, Option<Box<Nela64>>)> {
    let mut agent = make_agent(kind, cfg, world, planted)?;
    let mut source = RoundSource {
        rng: stream(seed, ROUND_STREAM),
        cfg,
        items: world.catalog.as_deref().map(|c| &c.items),
    };
    let mut log = MetricsLog::new(kind.as_str(), seed);
    log.rounds.reserve(cfg.horizon);
    for t in 1..=cfg.horizon {
        let (user, arms) = source.next()?;
        let policy = agent.policy();
        let chosen = policy.select(user, &arms);
        let rec = play_round(t, &world.truth, &world.graph, arms, user, chosen, cfg.sigma, &mut source.rng);
        policy.update(user, rec.arm_set.arm(chosen), rec.reward)?;
        log.record(rec.instant_regret, policy.detected_anomalies(), &world.truth.anomalies);
    }
    let state = match agent {
        Agent::Networked(p) if cfg.dump_state && kind == PolicyKind::Nela => Some(p),
        _ => None,
    };
    Ok((log, state))
}

/// Results of one `(gamma, nonzero_dims)` cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub label: String,
    pub gamma: f64,
    pub nonzero_dims: usize,
    /// Ordered by policy (config order), then seed (config order).
    pub logs: Vec<MetricsLog>,
    pub aggregates: Vec<Aggregate>,
    /// Seconds spent per policy, summed over seeds; aligned with `aggregates`.
    pub wall_clock: Vec<f64>,
    pub states: Vec<(u64, Box<Nela64>)>,
    pub worlds: Vec<(u64, Arc<World>)>,
}

impl CellResult {
    pub fn aggregate_for(&self, policy: PolicyKind) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.policy == policy.as_str())
    }

    pub fn logs_for(&self, policy: PolicyKind) -> impl Iterator<Item = &MetricsLog> {
        self.logs.iter().filter(move |l| l.policy == policy.as_str())
    }
}

fn cell_label(cfg: &ExperimentConfig, gamma: f64, nonzero_dims: usize) -> String {
    if cfg.scenario == Scenario::Sweep {
        format!("gamma{gamma}_nz{nonzero_dims}")
    } else {
        cfg.scenario.as_str().to_string()
    }
}

fn load_replay(cfg: &ExperimentConfig) -> Result<Option<Arc<ReplayData>>> {
    match (&cfg.user_features, &cfg.item_features) {
        (Some(u), Some(i)) if cfg.scenario == Scenario::Replay => Ok(Some(Arc::new(ReplayData::load(u, i)?))),
        _ => Ok(None),
    }
}

/// Runs every replication in memory without touching the filesystem.
///
/// For replays, `replay` supplies the feature matrices; when `None` they are
/// loaded from the configured paths. `n` and `d` of a replay are taken from
/// the user-feature matrix.
pub fn simulate(cfg: &ExperimentConfig, replay: Option<ReplayData>, workers: usize) -> Result<Vec<CellResult>> {
    let mut cfg = cfg.clone();
    let replay = match replay {
        Some(r) => Some(Arc::new(r)),
        None => load_replay(&cfg)?,
    };
    if let Some(r) = &replay {
        cfg.n = r.users.cols();
        cfg.d = r.users.rows();
        if cfg.arms > r.items.cols() {
            return Err(HarnessError::Validation(format!(
                "cannot offer {} distinct items from a catalog of {}",
                cfg.arms,
                r.items.cols()
            )));
        }
    } else if cfg.scenario == Scenario::Replay {
        return Err(HarnessError::Validation("replay needs user and item features".into()));
    }
    cfg.validate()?;
    let cfg = &cfg;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;

    let cells = cfg.cells();
    let world_keys: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let worlds: Vec<Arc<World>> = pool.install(|| {
        world_keys
            .par_iter()
            .map(|&(c, seed)| {
                let (gamma, nz) = cells[c];
                build_world(cfg, gamma, nz, seed, replay.as_ref()).map(Arc::new)
            })
            .collect::<Result<_>>()
    })?;

    // (cell, policy, seed index)
    let tasks: Vec<(usize, PolicyKind, usize)> = (0..cells.len())
        .flat_map(|c| {
            cfg.policies
                .iter()
                .flat_map(move |&p| (0..cfg.seeds.len()).map(move |s| (c, p, s)))
        })
        .collect();
    let outputs: Vec<(MetricsLog, Option<Box<Nela64>>, f64)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, kind, s)| {
                let seed = cfg.seeds[s];
                let world = &worlds[c * cfg.seeds.len() + s];
                let started = Instant::now();
                let planted = cfg.planted_anomalies(cells[c].0);
                let out = run_single(cfg, world, kind, seed, planted)?;
                eprintln!(
                    "[{}] {kind} seed {seed}: regret {:.3} in {:.2?}",
                    cell_label(cfg, cells[c].0, cells[c].1),
                    out.0.cum_regret(),
                    started.elapsed()
                );
                Ok((out.0, out.1, started.elapsed().as_secs_f64()))
            })
            .collect::<Result<_>>()
    })?;

    let mut outputs = outputs.into_iter();
    let mut results = Vec::with_capacity(cells.len());
    for (c, &(gamma, nonzero_dims)) in cells.iter().enumerate() {
        let mut logs = Vec::new();
        let mut aggregates = Vec::new();
        let mut wall_clock = Vec::new();
        let mut states = Vec::new();
        for _ in &cfg.policies {
            let mut group = Vec::with_capacity(cfg.seeds.len());
            let mut secs = 0.0;
            for &seed in &cfg.seeds {
                let (log, state, elapsed) = outputs.next().expect("one output per task");
                secs += elapsed;
                if let Some(st) = state {
                    states.push((seed, st));
                }
                group.push(log);
            }
            aggregates.push(aggregate(&group)?);
            wall_clock.push(secs);
            logs.extend(group);
        }
        let cell_worlds = cfg
            .seeds
            .iter()
            .enumerate()
            .map(|(s, &seed)| (seed, Arc::clone(&worlds[c * cfg.seeds.len() + s])))
            .collect();
        results.push(CellResult {
            label: cell_label(cfg, gamma, nonzero_dims),
            gamma,
            nonzero_dims,
            logs,
            aggregates,
            wall_clock,
            states,
            worlds: cell_worlds,
        });
    }
    Ok(results)
}

#[derive(Serialize)]
struct PolicySummary {
    policy: String,
    seeds: usize,
    final_cum_regret_mean: f64,
    final_cum_regret_se: f64,
    final_precision_mean: f64,
    final_recall_mean: f64,
    growth_exponent: Option<f64>,
    wall_clock_secs: f64,
}

#[derive(Serialize)]
struct Summary {
    label: String,
    gamma: f64,
    nonzero_dims: usize,
    horizon: usize,
    policies: Vec<PolicySummary>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    config_sha256: String,
    seeds: &'a [u64],
    round_stream: u64,
    world_stream: u64,
    cells: Vec<&'a str>,
    config: &'a ExperimentConfig,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn cell_dir(cfg: &ExperimentConfig, cell: &CellResult) -> PathBuf {
    if cfg.scenario == Scenario::Sweep {
        cfg.out.join(&cell.label)
    } else {
        cfg.out.clone()
    }
}

fn summarize(cell: &CellResult, horizon: usize) -> Summary {
    let policies = cell
        .aggregates
        .iter()
        .zip(&cell.wall_clock)
        .map(|(a, &secs)| {
            let last = a.final_row().expect("horizon >= 1");
            PolicySummary {
                policy: a.policy.clone(),
                seeds: a.seeds,
                final_cum_regret_mean: last.cum_regret.mean,
                final_cum_regret_se: last.cum_regret.se,
                final_precision_mean: last.precision.mean,
                final_recall_mean: last.recall.mean,
                growth_exponent: growth_exponent(&a.mean_cumulative_curve()),
                wall_clock_secs: secs,
            }
        })
        .collect();
    Summary {
        label: cell.label.clone(),
        gamma: cell.gamma,
        nonzero_dims: cell.nonzero_dims,
        horizon,
        policies,
    }
}

/// Persists per-seed logs, aggregates, a summary per cell and the manifest.
pub fn write_results(cfg: &ExperimentConfig, results: &[CellResult]) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    for cell in results {
        let dir = cell_dir(cfg, cell);
        let logs = dir.join("logs");
        fs::create_dir_all(&logs).map_err(io_err(&logs))?;
        for log in &cell.logs {
            log.write_csv(&logs.join(format!("{}_seed{}.csv", log.policy, log.seed)))?;
        }
        for agg in &cell.aggregates {
            agg.write_csv(&dir.join(format!("aggregate_{}.csv", agg.policy)))?;
        }
        write_json(&dir.join("summary.json"), &summarize(cell, cfg.horizon))?;
        if cfg.dump_state {
            for (seed, world) in &cell.worlds {
                let tdir = dir.join("truth").join(format!("seed{seed}"));
                fs::create_dir_all(&tdir).map_err(io_err(&tdir))?;
                world.truth.save(&tdir)?;
                write_matrix_csv(&tdir.join("influence.csv"), world.graph.matrix())?;
            }
            let sdir = dir.join("state");
            fs::create_dir_all(&sdir).map_err(io_err(&sdir))?;
            for (seed, p) in &cell.states {
                p.write_snapshot(&sdir.join(format!("nela_seed{seed}.json")))?;
                p.history()
                    .write_debug_dump(&sdir.join(format!("residual_seed{seed}.csv")), p.v_hat(), p.support())?;
            }
        }
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        core_version: env!("CARGO_PKG_VERSION"),
        config_sha256: cfg.hash(),
        seeds: &cfg.seeds,
        round_stream: ROUND_STREAM,
        world_stream: WORLD_STREAM,
        cells: results.iter().map(|c| c.label.as_str()).collect(),
        config: cfg,
    };
    write_json(&cfg.out.join("manifest.json"), &manifest)
}

/// [`simulate`] followed by [`write_results`], using `NELA_WORKERS` workers.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let started = Instant::now();
    let results = simulate(cfg, None, default_workers())?;
    write_results(cfg, &results)?;
    eprintln!("finished {} cell(s) in {:.2?}", results.len(), started.elapsed());
    Ok(results)
}

/// Recomputes `aggregate_<policy>.csv` for `dir` and every subdirectory that
/// holds a `logs/` folder. Returns the directories processed.
pub fn regather(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut done = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let logs = d.join("logs");
        if logs.is_dir() {
            regather_one(&d, &logs)?;
            done.push(d.clone());
        }
        let mut subdirs: Vec<PathBuf> = fs::read_dir(&d)
            .map_err(io_err(&d))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && p.file_name().is_some_and(|f| f != "logs"))
            .collect();
        subdirs.sort();
        stack.extend(subdirs.into_iter().rev());
    }
    if done.is_empty() {
        return Err(HarnessError::Validation(format!(
            "no logs/ directory under {}",
            dir.display()
        )));
    }
    Ok(done)
}

fn regather_one(dir: &Path, logs: &Path) -> Result<()> {
    let mut groups: BTreeMap<String, Vec<MetricsLog>> = BTreeMap::new();
    let mut files: Vec<PathBuf> = fs::read_dir(logs)
        .map_err(io_err(logs))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    for path in files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some((policy, seed)) = stem.rsplit_once("_seed") else {
            continue;
        };
        let Ok(seed) = seed.parse::<u64>() else {
            continue;
        };
        groups
            .entry(policy.to_string())
            .or_default()
            .push(MetricsLog::read_csv(&path, policy, seed)?);
    }
    for (policy, mut group) in groups {
        group.sort_by_key(|l| l.seed);
        aggregate(&group)?.write_csv(&dir.join(format!("aggregate_{policy}.csv")))?;
    }
    Ok(())
}
