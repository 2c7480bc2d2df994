use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use recbayes_core::classifier::{self, write_metrics_csv, TrainConfig};
use recbayes_core::harness::{self, ExperimentConfig, Resources};
use recbayes_core::policies::{tabular_learn, EpsilonSchedule, LearnConfig};
use recbayes_core::trajectories::{build_dataset, collect, Behavior, TrajectoryBuffer};
use recbayes_core::{DomainKind, ExperimentSet, GridConfig};

#[derive(Parser)]
#[command(name = "recbayes", version, about = "Ad hoc teammate and task identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out best responses next to every team-task of a set and store the trajectories.
    Collect(CollectArgs),
    /// Train the recurrent team-task classifier on collected trajectories.
    TrainClassifier(TrainClassifierArgs),
    /// Learn a tabular best response per team-task.
    TrainPolicy(TrainPolicyArgs),
    /// Run the trials described by a config file into a run directory.
    Evaluate(EvaluateArgs),
    /// Normalize run directories against the original-team and random anchors.
    Report(ReportArgs),
}

#[derive(Args)]
struct SetArgs {
    /// lbf or pp
    #[arg(long, value_parser = parse_domain)]
    domain: DomainKind,
    #[arg(long, default_value_t = 7)]
    size: usize,
    /// team, task or both
    #[arg(long, value_parser = parse_set)]
    set: ExperimentSet,
    #[arg(long)]
    n_agents: Option<usize>,
}

impl SetArgs {
    fn grid(&self) -> GridConfig {
        let g = GridConfig::standard(self.domain, self.size);
        GridConfig { n_agents: self.n_agents.unwrap_or(g.n_agents), ..g }
    }
}

#[derive(Args)]
struct CollectArgs {
    #[command(flatten)]
    set: SetArgs,
    /// Trajectories per team-task.
    #[arg(long)]
    t: usize,
    /// Maximum trajectory length.
    #[arg(long)]
    l: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mix the best response with a uniform policy at this weight.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Output directory; one k{k}.rbtj per team-task.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainClassifierArgs {
    /// Directory of k{k}.rbtj buffers.
    #[arg(long)]
    data: PathBuf,
    /// Number of team-tasks.
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train, validation and test fractions.
    #[arg(long, num_args = 3, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    split: Vec<f64>,
    /// Checkpoint path; metrics go next to it as .metrics.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainPolicyArgs {
    #[command(flatten)]
    set: SetArgs,
    #[arg(long, default_value_t = 2000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; one k{k}.rbqp per team-task.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    random: PathBuf,
    /// Agent run directories.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_domain(s: &str) -> Result<DomainKind, String> {
    DomainKind::from_token(s).ok_or_else(|| format!("unknown domain {s:?}"))
}

fn parse_set(s: &str) -> Result<ExperimentSet, String> {
    ExperimentSet::from_token(s).ok_or_else(|| format!("unknown experiment set {s:?}"))
}

fn buffer_path(dir: &Path, k: usize, ext: &str) -> PathBuf {
    dir.join(format!("k{k}.{ext}"))
}

fn run_collect(a: CollectArgs) -> Result<()> {
    let grid = a.set.grid();
    let behavior = match a.epsilon {
        None => Behavior::BestResponse,
        Some(e) if (0.0..=1.0).contains(&e) => Behavior::Mixture(e),
        Some(e) => bail!("epsilon must be in [0, 1], got {e}"),
    };
    std::fs::create_dir_all(&a.out)?;
    for tt in a.set.set.team_tasks() {
        let buf = collect(&grid, tt, behavior, a.t, a.l, a.seed)?;
        let path = buffer_path(&a.out, tt.k, "rbtj");
        buf.save(&path).with_context(|| format!("writing {}", path.display()))?;
        info!("{tt}: {} trajectories, mean length {:.2}", buf.trajectories.len(), buf.mean_len());
    }
    Ok(())
}

fn run_train_classifier(a: TrainClassifierArgs) -> Result<()> {
    let buffers = (1..=a.k)
        .map(|k| {
            let p = buffer_path(&a.data, k, "rbtj");
            TrajectoryBuffer::load(&p).with_context(|| format!("reading {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = build_dataset(&buffers, [a.split[0], a.split[1], a.split[2]], a.seed)?;
    let cfg = TrainConfig { epochs: a.epochs, lr: a.lr, batch: a.batch, seed: a.seed, ..Default::default() };
    let out = classifier::train_with(&ds, &cfg, |m| info!("{}", m.csv_row()))?;
    if let Some(parent) = a.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    out.params.save(&a.out)?;
    write_metrics_csv(&out.history, &a.out.with_extension("metrics.csv"))?;
    let test: Vec<_> = ds.split(recbayes_core::trajectories::Split::Test).collect();
    if !test.is_empty() {
        let pairs: Vec<_> = test.iter().map(|s| (s.trajectory.as_slice(), s.class)).collect();
        let (loss, acc) = classifier::evaluate(&out.params, &pairs);
        println!("test loss {loss:.4} final-step accuracy {acc:.4}");
    }
    println!("best epoch {} written to {}", out.best_epoch, a.out.display());
    Ok(())
}

fn run_train_policy(a: TrainPolicyArgs) -> Result<()> {
    let grid = a.set.grid();
    std::fs::create_dir_all(&a.out)?;
    let learn = LearnConfig {
        episodes: a.episodes,
        seed: a.seed,
        epsilon: EpsilonSchedule { decay_episodes: a.episodes / 2, ..Default::default() },
        ..Default::default()
    };
    for tt in a.set.set.team_tasks() {
        let table = tabular_learn(&grid, tt, &learn)?;
        table.save(&buffer_path(&a.out, tt.k, "rbqp"))?;
        info!("{tt}: {} states", table.entries.len());
    }
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let res = Resources::load(&cfg)?;
    let result = harness::run_experiment(&cfg, &res)?;
    let manifest = harness::write_run(&cfg, &result, &a.out)?;
    for (tt, s) in &result.cells {
        println!("{tt}: {:.2} ± {:.2} steps", s.mean, s.sd);
    }
    println!("all: {:.2} ± {:.2} steps over {} trials", result.overall.mean, result.overall.sd, result.overall.n);
    println!("manifest {}", manifest.display());
    Ok(())
}

fn run_report(a: ReportArgs) -> Result<()> {
    for (name, mean, score) in harness::report(&a.original, &a.random, &a.runs, &a.out)? {
        println!("{name}: {mean:.2} steps, normalized {score:.3}");
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Collect(a) => run_collect(a),
        Command::TrainClassifier(a) => run_train_classifier(a),
        Command::TrainPolicy(a) => run_train_policy(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Report(a) => run_report(a),
    }
}
