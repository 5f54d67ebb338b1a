use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nela_harness::config::parse_seeds;
use nela_harness::{regather, run_experiment, ExperimentConfig, HarnessError, PolicyKind, Scenario};

#[derive(Parser)]
#[command(name = "nela", version, about = "Networked anomaly-aware bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Small uniform graph (star or complete), optional anomaly on user 0.
    Toy {
        #[arg(long, value_enum)]
        graph: Option<ToyGraph>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Gaussian preferences, similarity graph, planted anomalies.
    Synthetic(RunArgs),
    /// Synthetic runs over every (gamma, nonzero-dims) pair.
    Sweep(RunArgs),
    /// Preferences and items loaded from CSV feature matrices.
    Replay {
        #[arg(long)]
        user_features: Option<PathBuf>,
        #[arg(long)]
        item_features: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Rebuild aggregate CSVs from existing per-seed logs.
    PlotData {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ToyGraph {
    Star,
    Full,
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    arms: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long)]
    anomalies: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    nonzero_dims: Option<Vec<usize>>,
    /// Comma-separated subset of nela,colin,graphucb,nlinucb,linucb.
    #[arg(long)]
    policies: Option<String>,
    /// Comma-separated list or inclusive range `a..b`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lasso_every: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    keep_fraction: Option<f64>,
    #[arg(long)]
    arm_correlation: Option<f64>,
    #[arg(long)]
    s_v: Option<f64>,
    /// Adjacency list (`i,j` per line, both directions) for toy graphs.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Also write ground truth, final NELA state and residual regression dumps.
    #[arg(long)]
    dump_state: bool,
}

impl RunArgs {
    /// Builds the config: scenario defaults, then the file, then flags, then
    /// `extra`. `choose` maps the file's scenario (if any) to the one to run.
    fn resolve(
        self,
        choose: impl FnOnce(Option<Scenario>) -> Scenario,
        extra: impl FnOnce(&mut ExperimentConfig),
    ) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
                let scenario = choose(ExperimentConfig::scenario_in(&text)?);
                ExperimentConfig::from_toml_for(&text, Some(scenario))?
            }
            None => ExperimentConfig::for_scenario(choose(None)),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field { cfg.$field = v; }
            )*};
        }
        set!(
            n,
            d,
            arms,
            horizon,
            gamma,
            anomalies,
            nonzero_dims,
            out,
            lasso_every,
            sigma,
            delta,
            lambda0,
            lambda1,
            keep_fraction,
            arm_correlation
        );
        if self.warmup.is_some() {
            cfg.warmup = self.warmup;
        }
        if self.s_v.is_some() {
            cfg.s_v = self.s_v;
        }
        if self.edges.is_some() {
            cfg.edges = self.edges;
        }
        if let Some(p) = &self.policies {
            cfg.policies = p.split(',').map(str::parse).collect::<Result<Vec<PolicyKind>, _>>()?;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        cfg.dump_state |= self.dump_state;
        extra(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let cfg = match cli.command {
        Command::Toy { graph, run } => run.resolve(
            |declared| match graph {
                Some(ToyGraph::Star) => Scenario::ToyStar,
                Some(ToyGraph::Full) => Scenario::ToyFull,
                None => declared.filter(|s| s.is_toy()).unwrap_or(Scenario::ToyFull),
            },
            |_| {},
        )?,
        Command::Synthetic(run) => run.resolve(|_| Scenario::Synthetic, |_| {})?,
        Command::Sweep(run) => run.resolve(|_| Scenario::Sweep, |_| {})?,
        Command::Replay {
            user_features,
            item_features,
            run,
        } => run.resolve(
            |_| Scenario::Replay,
            |cfg| {
                if user_features.is_some() {
                    cfg.user_features = user_features;
                }
                if item_features.is_some() {
                    cfg.item_features = item_features;
                }
            },
        )?,
        Command::PlotData { dir } => {
            for d in regather(&dir)? {
                println!("{}", d.display());
            }
            return Ok(());
        }
    };
    let results = run_experiment(&cfg)?;
    for cell in &results {
        for agg in &cell.aggregates {
            let last = agg.final_row().expect("horizon >= 1");
            println!(
                "{}\t{}\tcum_regret={:.4}±{:.4}\tprecision={:.3}\trecall={:.3}",
                cell.label, agg.policy, last.cum_regret.mean, last.cum_regret.se, last.precision.mean, last.recall.mean
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
