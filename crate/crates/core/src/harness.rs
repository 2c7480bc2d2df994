//! Experiment driver: replace-one-teammate trials, per-cell statistics,
//! normalization against the team and random anchors, posterior traces and
//! run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{debug, info};
use ndarray::Array1;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bayes_oracle::{enumerate_model, widen_observations, ExactFilter, ObsCodebook, OracleError, STATE_CAP};
use crate::binio::FormatError;
use crate::classifier::{self, ClassifierError, ClassifierParams, Posterior};
use crate::env::{Action, DomainKind, EnvError, GridConfig, EPISODE_CAP};
use crate::episode::AdHocEpisode;
use crate::policies::{
    mixture_action, sample_action, scripted_best_response, tabular_policy, ActionDist, PolicyError, PolicyHandle,
    QTable,
};
use crate::rng::{self, purpose};
use crate::teammates::{ExperimentSet, TeamTaskId};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("normalization undefined: original and random means are both {0}")]
    DegenerateNormalization(f64),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    /// The team's own strategy fills the slot.
    OriginalTeammate,
    /// Best response of the true team-task.
    ScriptedOracle,
    /// Classifier posterior mixing the best-response library.
    RecBayes,
    RandomPolicy,
    /// Exact tabular filter mixing the best-response library.
    ExactFilterAgent,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [
        AgentKind::OriginalTeammate,
        AgentKind::ScriptedOracle,
        AgentKind::RecBayes,
        AgentKind::RandomPolicy,
        AgentKind::ExactFilterAgent,
    ];

    pub fn token(self) -> &'static str {
        match self {
            AgentKind::OriginalTeammate => "original",
            AgentKind::ScriptedOracle => "oracle",
            AgentKind::RecBayes => "recbayes",
            AgentKind::RandomPolicy => "random",
            AgentKind::ExactFilterAgent => "exact_filter",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.token() == s.trim())
    }

    pub fn identifies(self) -> bool {
        matches!(self, AgentKind::RecBayes | AgentKind::ExactFilterAgent)
    }
}

/// Where the per-team-task best responses come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicySource {
    Scripted,
    /// Directory holding `k{k}.rbqp` tables.
    Tabular(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: DomainKind,
    pub size: usize,
    pub n_agents: usize,
    pub set: ExperimentSet,
    pub agent: AgentKind,
    pub trials: usize,
    pub seed: u64,
    pub classifier: Option<PathBuf>,
    pub policies: PolicySource,
}

impl ExperimentConfig {
    pub fn new(kind: DomainKind, size: usize, set: ExperimentSet, agent: AgentKind) -> Self {
        ExperimentConfig {
            kind,
            size,
            n_agents: GridConfig::standard(kind, size).n_agents,
            set,
            agent,
            trials: 16,
            seed: 0,
            classifier: None,
            policies: PolicySource::Scripted,
        }
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig { n_agents: self.n_agents, ..GridConfig::standard(self.kind, self.size) }
    }

    pub fn team_tasks(&self) -> Vec<TeamTaskId> {
        self.set.team_tasks()
    }

    /// Flat `key = value` form; [`ExperimentConfig::parse`] reads it back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "domain = {}", self.kind.token());
        let _ = writeln!(s, "size = {}", self.size);
        let _ = writeln!(s, "n_agents = {}", self.n_agents);
        let _ = writeln!(s, "set = {}", self.set.token());
        let _ = writeln!(s, "agent = {}", self.agent.token());
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(c) = &self.classifier {
            let _ = writeln!(s, "classifier = {}", c.display());
        }
        match &self.policies {
            PolicySource::Scripted => s.push_str("policies = scripted\n"),
            PolicySource::Tabular(d) => {
                let _ = writeln!(s, "policies = {}", d.display());
            }
        }
        s
    }

    /// Parses the flat config format: one `key = value` per line, `#`
    /// comments. Keys starting with `hash.` (written into manifests) are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim().to_string();
            if k.starts_with("hash.") {
                continue;
            }
            if kv.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(HarnessError::Config(format!("duplicate key {k}")));
            }
        }
        let take = |kv: &mut BTreeMap<String, String>, k: &str| kv.remove(k);
        let need = |kv: &mut BTreeMap<String, String>, k: &str| {
            take(kv, k).ok_or_else(|| HarnessError::Config(format!("missing key {k}")))
        };
        let bad = |k: &str, v: &str| HarnessError::Config(format!("bad value for {k}: {v:?}"));
        let d = need(&mut kv, "domain")?;
        let kind = DomainKind::from_token(&d).ok_or_else(|| bad("domain", &d))?;
        let v = need(&mut kv, "size")?;
        let size: usize = v.parse().map_err(|_| bad("size", &v))?;
        let v = need(&mut kv, "set")?;
        let set = ExperimentSet::from_token(&v).ok_or_else(|| bad("set", &v))?;
        let v = need(&mut kv, "agent")?;
        let agent = AgentKind::from_token(&v).ok_or_else(|| bad("agent", &v))?;
        let mut cfg = ExperimentConfig::new(kind, size, set, agent);
        if let Some(v) = take(&mut kv, "n_agents") {
            cfg.n_agents = v.parse().map_err(|_| bad("n_agents", &v))?;
        }
        if let Some(v) = take(&mut kv, "trials") {
            cfg.trials = v.parse().map_err(|_| bad("trials", &v))?;
        }
        if let Some(v) = take(&mut kv, "seed") {
            cfg.seed = v.parse().map_err(|_| bad("seed", &v))?;
        }
        cfg.classifier = take(&mut kv, "classifier").map(PathBuf::from);
        if let Some(v) = take(&mut kv, "policies") {
            cfg.policies = if v == "scripted" { PolicySource::Scripted } else { PolicySource::Tabular(v.into()) };
        }
        if let Some(k) = kv.keys().next() {
            return Err(HarnessError::Config(format!("unknown key {k}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        self.grid().validate()?;
        if self.agent == AgentKind::RecBayes && self.classifier.is_none() {
            return Err(HarnessError::Config("the recbayes agent needs a classifier checkpoint".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

pub fn file_hash(path: &Path) -> Result<String, HarnessError> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Everything an experiment loads once: classifier, policy tables and, for
/// the exact filter, one model set per ad hoc slot.
pub struct Resources {
    pub team_tasks: Vec<TeamTaskId>,
    pub classifier: Option<Arc<ClassifierParams>>,
    pub tables: Option<Vec<Arc<QTable>>>,
    pub filters: Option<(ObsCodebook, Vec<ExactFilter>)>,
}

impl Resources {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let team_tasks = cfg.team_tasks();
        let k = team_tasks.len();
        let classifier = match (&cfg.classifier, cfg.agent) {
            (Some(path), AgentKind::RecBayes) => Some(Arc::new(
                ClassifierParams::load_for(path, k).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?,
            )),
            _ => None,
        };
        let tables = match &cfg.policies {
            PolicySource::Scripted => None,
            PolicySource::Tabular(dir) => Some(
                team_tasks
                    .iter()
                    .map(|tt| Ok(Arc::new(QTable::load(&dir.join(format!("k{}.rbqp", tt.k)))?)))
                    .collect::<Result<Vec<_>, HarnessError>>()?,
            ),
        };
        let filters = if cfg.agent == AgentKind::ExactFilterAgent {
            Some(build_filters(&cfg.grid(), &team_tasks)?)
        } else {
            None
        };
        Ok(Resources { team_tasks, classifier, tables, filters })
    }

    /// Resources around an in-memory classifier.
    pub fn with_classifier(cfg: &ExperimentConfig, params: ClassifierParams) -> Result<Self, HarnessError> {
        if params.k != cfg.team_tasks().len() {
            return Err(HarnessError::Config(format!(
                "classifier has K={}, the set has {} team-tasks",
                params.k,
                cfg.team_tasks().len()
            )));
        }
        let mut cfg = cfg.clone();
        cfg.classifier = None;
        let agent = cfg.agent;
        cfg.agent = AgentKind::OriginalTeammate;
        let mut res = Resources::load(&cfg)?;
        if agent == AgentKind::ExactFilterAgent {
            res.filters = Some(build_filters(&cfg.grid(), &res.team_tasks)?);
        }
        res.classifier = Some(Arc::new(params));
        Ok(res)
    }

    fn library(&self, cfg: &GridConfig) -> Vec<PolicyHandle> {
        match &self.tables {
            Some(t) => t.iter().map(|t| tabular_policy(t.clone())).collect(),
            None => self.team_tasks.iter().map(|&tt| scripted_best_response(tt, cfg.kind, cfg.n_agents)).collect(),
        }
    }
}

/// Exact models for every ad hoc slot, sharing one observation codebook.
fn build_filters(cfg: &GridConfig, team_tasks: &[TeamTaskId]) -> Result<(ObsCodebook, Vec<ExactFilter>), HarnessError> {
    let mut book = ObsCodebook::default();
    let mut per_slot = Vec::new();
    for slot in 0..cfg.n_agents {
        let models = team_tasks
            .iter()
            .map(|&tt| enumerate_model(cfg, tt, &[slot], &mut book, STATE_CAP))
            .collect::<Result<Vec<_>, _>>()?;
        per_slot.push(models);
    }
    let filters = per_slot
        .into_iter()
        .map(|mut models| {
            widen_observations(&mut models, &book);
            ExactFilter::new(models.into_iter().map(|m| m.pomdp).collect())
        })
        .collect();
    Ok((book, filters))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub team_task: TeamTaskId,
    pub trial: usize,
    pub seed: u64,
    pub slot: usize,
    /// Steps to completion; capped episodes count the cap.
    pub steps: u32,
    pub solved: bool,
    /// Posterior after every step (identification agents only).
    pub trace: Vec<Posterior>,
}

pub fn trial_seed(base: u64, k: usize, trial: usize) -> u64 {
    rng::derive(base, &[purpose::TRIAL, k as u64, trial as u64])
}

enum Controller {
    Original,
    Random,
    Single(PolicyHandle),
    Mixture { library: Vec<PolicyHandle>, identifier: Identifier },
}

enum Identifier {
    Recurrent { params: Arc<ClassifierParams>, hidden: Array1<f64>, posterior: Posterior },
    Exact { filter: ExactFilter, book: ObsCodebook },
}

impl Identifier {
    fn posterior(&self) -> &Posterior {
        match self {
            Identifier::Recurrent { posterior, .. } => posterior,
            Identifier::Exact { filter, .. } => &filter.posterior,
        }
    }

    fn update(&mut self, a: Action, obs: &crate::env::Observation, pi_prob: f64) -> Result<(), HarnessError> {
        match self {
            Identifier::Recurrent { params, hidden, posterior } => {
                let (p, h) = classifier::posterior_step(params, hidden, Some(a), obs);
                *posterior = p;
                *hidden = h;
            }
            Identifier::Exact { filter, book } => {
                filter.observe(a.index(), book.get(obs), pi_prob)?;
            }
        }
        Ok(())
    }
}

/// One trial: draw the replaced slot, run the agent alongside the team until
/// the task is solved or the step cap is hit.
pub fn run_trial(
    cfg: &ExperimentConfig,
    res: &Resources,
    team_task: TeamTaskId,
    trial: usize,
) -> Result<TrialResult, HarnessError> {
    let grid = cfg.grid();
    let seed = trial_seed(cfg.seed, team_task.k, trial);
    let slot = AdHocEpisode::random_slot(&grid, seed);
    let mut ep = AdHocEpisode::new(&grid, team_task, slot, seed)?;
    let mut draw = rng::stream(seed, &[purpose::BEHAVIOR]);
    let first = ep.observation();
    let mut ctl = match cfg.agent {
        AgentKind::OriginalTeammate => Controller::Original,
        AgentKind::RandomPolicy => Controller::Random,
        AgentKind::ScriptedOracle => {
            let mut lib = res.library(&grid);
            let i = res
                .team_tasks
                .iter()
                .position(|t| *t == team_task)
                .ok_or_else(|| HarnessError::Config(format!("{team_task} is not in the set")))?;
            let mut p = lib.swap_remove(i);
            p.begin(slot, first);
            Controller::Single(p)
        }
        AgentKind::RecBayes | AgentKind::ExactFilterAgent => {
            let mut library = res.library(&grid);
            library.iter_mut().for_each(|p| p.begin(slot, first));
            let identifier = if cfg.agent == AgentKind::RecBayes {
                let params = res.classifier.clone().ok_or_else(|| HarnessError::Config("no classifier loaded".into()))?;
                let posterior = classifier::prior(&params);
                Identifier::Recurrent { params, hidden: classifier::initial_hidden(), posterior }
            } else {
                let (book, filters) =
                    res.filters.as_ref().ok_or_else(|| HarnessError::Config("no exact models loaded".into()))?;
                let mut filter = filters[slot].clone();
                filter.reset();
                Identifier::Exact { filter, book: book.clone() }
            };
            Controller::Mixture { library, identifier }
        }
    };
    let mut trace = Vec::new();
    while !ep.is_done() && !ep.is_capped() {
        let (a, dist) = match &ctl {
            Controller::Original => {
                let a = ep.team_member_action();
                (a, ActionDist::one_hot(a))
            }
            Controller::Random => {
                let d = ActionDist::uniform();
                (sample_action(&d, &mut draw)?, d)
            }
            Controller::Single(p) => {
                let d = p.distribution();
                (sample_action(&d, &mut draw)?, d)
            }
            Controller::Mixture { library, identifier } => {
                let d = mixture_action(library, &identifier.posterior().0)?;
                (sample_action(&d, &mut draw)?, d)
            }
        };
        let tr = ep.step(a)?;
        match &mut ctl {
            Controller::Single(p) => p.advance(a, tr.obs),
            Controller::Mixture { library, identifier } => {
                library.iter_mut().for_each(|p| p.advance(a, tr.obs));
                identifier.update(a, &tr.obs, dist.prob(a))?;
                trace.push(identifier.posterior().clone());
            }
            Controller::Original | Controller::Random => {}
        }
    }
    Ok(TrialResult { team_task, trial, seed, slot, steps: ep.t(), solved: ep.is_done(), trace })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Stats {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Stats {
        let xs: Vec<f64> = xs.into_iter().collect();
        let n = xs.len();
        if n == 0 {
            return Stats { n, mean: f64::NAN, sd: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Stats { n, mean, sd }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub trials: Vec<TrialResult>,
    /// Per team-task, in k order.
    pub cells: Vec<(TeamTaskId, Stats)>,
    pub overall: Stats,
}

/// Runs every team-task of the set for `cfg.trials` trials, in (k, trial)
/// order.
pub fn run_experiment(cfg: &ExperimentConfig, res: &Resources) -> Result<ExperimentResult, HarnessError> {
    let mut trials = Vec::with_capacity(cfg.trials * res.team_tasks.len());
    let mut cells = Vec::new();
    for &tt in &res.team_tasks {
        let start = trials.len();
        for i in 0..cfg.trials {
            trials.push(run_trial(cfg, res, tt, i)?);
        }
        let stats = Stats::of(trials[start..].iter().map(|t| t.steps as f64));
        debug!("{tt}: mean {:.2} sd {:.2} over {}", stats.mean, stats.sd, stats.n);
        cells.push((tt, stats));
    }
    let overall = Stats::of(trials.iter().map(|t| t.steps as f64));
    info!("{} {} {}: mean steps {:.2} over {} trials", cfg.agent.token(), cfg.kind, cfg.set, overall.mean, overall.n);
    Ok(ExperimentResult { trials, cells, overall })
}

/// Score relative to the team (1) and random (0) anchors.
pub fn normalize(agent_mean: f64, original_mean: f64, random_mean: f64) -> Result<f64, HarnessError> {
    if random_mean == original_mean || !random_mean.is_finite() || !original_mean.is_finite() {
        return Err(HarnessError::DegenerateNormalization(original_mean));
    }
    Ok((random_mean - agent_mean) / (random_mean - original_mean))
}

/// Final-step argmax as a 1-based k, with a flag set when the maximum was
/// shared (the lowest index wins).
pub fn identified_team_task(trace: &[Posterior]) -> Option<(usize, bool)> {
    let last = trace.last()?;
    let best = last.argmax();
    let tie = last.0.iter().enumerate().any(|(i, &p)| i != best && p == last.0[best]);
    if tie {
        debug!("identification tie at the final step; taking k={}", best + 1);
    }
    Some((best + 1, tie))
}

/// First step after which the argmax stays on its final value.
pub fn steps_to_lock(trace: &[Posterior]) -> Option<usize> {
    let final_k = trace.last()?.argmax();
    let unlocked = trace.iter().rposition(|p| p.argmax() != final_k);
    Some(unlocked.map_or(1, |i| i + 2))
}

pub const TRIALS_HEADER: [&str; 9] = ["k", "strategy", "task", "trial", "seed", "slot", "steps", "solved", "identified"];
pub const SUMMARY_HEADER: [&str; 6] = ["k", "strategy", "task", "n", "mean_steps", "sd_steps"];
pub const TRACE_HEADER: [&str; 5] = ["trial", "step", "k", "prob", "is_true"];
pub const TRACE_MEAN_HEADER: [&str; 3] = ["step", "mean_true_prob", "mean_false_prob_sum"];

pub fn write_trials_csv(trials: &[TrialResult], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRIALS_HEADER)?;
    for t in trials {
        let id = identified_team_task(&t.trace).map_or(String::new(), |(k, _)| k.to_string());
        w.write_record([
            t.team_task.k.to_string(),
            t.team_task.strategy.token().to_string(),
            t.team_task.task.token(),
            t.trial.to_string(),
            t.seed.to_string(),
            t.slot.to_string(),
            t.steps.to_string(),
            (t.solved as u8).to_string(),
            id,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(result: &ExperimentResult, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    let row = |k: String, s: &str, t: String, st: &Stats| {
        [k, s.to_string(), t, st.n.to_string(), format!("{:.4}", st.mean), format!("{:.4}", st.sd)]
    };
    for (tt, st) in &result.cells {
        w.write_record(row(tt.k.to_string(), tt.strategy.token(), tt.task.token(), st))?;
    }
    w.write_record(row("all".into(), "", String::new(), &result.overall))?;
    w.flush()?;
    Ok(())
}

/// Per-step trace rows plus the mean true / false-sum curve. Trials are
/// numbered by their position in `trials`; steps start at 1.
pub fn emit_posterior_trace(trials: &[TrialResult], path: &Path, mean_path: &Path) -> Result<Vec<(f64, f64)>, HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    for (i, t) in trials.iter().enumerate() {
        let truth = t.team_task.k - 1;
        for (s, post) in t.trace.iter().enumerate() {
            for (k, &p) in post.0.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    (s + 1).to_string(),
                    (k + 1).to_string(),
                    format!("{p:.6}"),
                    ((k == truth) as u8).to_string(),
                ])?;
            }
            if sums.len() <= s {
                sums.push((0.0, 0.0, 0));
            }
            let true_p = post.0.get(truth).copied().unwrap_or(0.0);
            sums[s].0 += true_p;
            sums[s].1 += post.0.iter().sum::<f64>() - true_p;
            sums[s].2 += 1;
        }
    }
    w.flush()?;
    let curve: Vec<(f64, f64)> = sums.iter().map(|&(a, b, n)| (a / n as f64, b / n as f64)).collect();
    let mut w = csv::Writer::from_path(mean_path)?;
    w.write_record(TRACE_MEAN_HEADER)?;
    for (s, (t, f)) in curve.iter().enumerate() {
        w.write_record([(s + 1).to_string(), format!("{t:.6}"), format!("{f:.6}")])?;
    }
    w.flush()?;
    Ok(curve)
}

/// Minimal two-series line chart of belief curves.
pub fn belief_chart_svg(curve: &[(f64, f64)], title: &str) -> String {
    let (w, h, pad) = (480.0, 300.0, 40.0);
    let n = curve.len().max(2) as f64 - 1.0;
    let pt = |i: usize, v: f64| (pad + (w - 2.0 * pad) * i as f64 / n, h - pad - (h - 2.0 * pad) * v.clamp(0.0, 1.0));
    let line = |sel: fn(&(f64, f64)) -> f64| {
        curve
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (x, y) = pt(i, sel(c));
                format!("{x:.1},{y:.1}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{pad}" y="20">{title}</text>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad},{} V{} H{}" fill="none" stroke="black"/>"#,
        pad,
        h - pad,
        w - pad
    );
    let _ = writeln!(s, r#"<text x="8" y="{}">1</text><text x="8" y="{}">0</text>"#, pad + 4.0, h - pad + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}">step</text>"#, w / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="green" stroke-width="2"/>"#, line(|c| c.0));
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="red" stroke-width="2"/>"#, line(|c| c.1));
    s.push_str("</svg>\n");
    s
}

/// Bar chart of normalized scores.
pub fn score_chart_svg(rows: &[(String, f64)]) -> String {
    let (w, bar, pad) = (480.0, 24.0, 120.0);
    let h = 40.0 + rows.len() as f64 * (bar + 8.0);
    let scale = (w - pad - 20.0) / rows.iter().map(|r| r.1.abs()).fold(1.0, f64::max);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    for (i, (label, v)) in rows.iter().enumerate() {
        let y = 20.0 + i as f64 * (bar + 8.0);
        let len = (v.max(0.0) * scale).max(1.0);
        let _ = writeln!(s, r#"<text x="4" y="{}">{label}</text>"#, y + bar * 0.7);
        let _ = writeln!(s, r#"<rect x="{pad}" y="{y}" width="{len:.1}" height="{bar}" fill="steelblue"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{v:.2}</text>"#, pad + len + 4.0, y + bar * 0.7);
    }
    s.push_str("</svg>\n");
    s
}

pub const OUTPUT_FILES: [&str; 5] = ["trials.csv", "summary.csv", "trace.csv", "trace_mean.csv", "beliefs.svg"];

/// Writes all outputs of an experiment plus `manifest.txt`, which is itself
/// a valid config with the hashes of the inputs and outputs appended.
pub fn write_run(
    cfg: &ExperimentConfig,
    result: &ExperimentResult,
    dir: &Path,
) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_trials_csv(&result.trials, &dir.join("trials.csv"))?;
    write_summary_csv(result, &dir.join("summary.csv"))?;
    let curve = emit_posterior_trace(&result.trials, &dir.join("trace.csv"), &dir.join("trace_mean.csv"))?;
    let title = format!("{} {} {}x{} {}", cfg.agent.token(), cfg.kind, cfg.size, cfg.size, cfg.set);
    std::fs::write(dir.join("beliefs.svg"), belief_chart_svg(&curve, &title))?;
    let mut m = cfg.to_text();
    let _ = writeln!(m, "hash.config = {}", cfg.hash());
    if let Some(c) = &cfg.classifier {
        let _ = writeln!(m, "hash.classifier = {}", file_hash(c)?);
    }
    if let PolicySource::Tabular(d) = &cfg.policies {
        for tt in cfg.team_tasks() {
            let _ = writeln!(m, "hash.policy.k{} = {}", tt.k, file_hash(&d.join(format!("k{}.rbqp", tt.k)))?);
        }
    }
    for f in OUTPUT_FILES {
        let _ = writeln!(m, "hash.{f} = {}", file_hash(&dir.join(f))?);
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, m)?;
    Ok(path)
}

/// Output hashes recorded in a manifest, keyed by file name.
pub fn manifest_output_hashes(manifest: &str) -> BTreeMap<String, String> {
    manifest
        .lines()
        .filter_map(|l| l.split_once('='))
        .filter_map(|(k, v)| {
            let k = k.trim().strip_prefix("hash.")?;
            OUTPUT_FILES.contains(&k).then(|| (k.to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Re-runs the experiment described by `manifest` into `dir` and checks
/// every output against the recorded hash. Returns the mismatching files.
pub fn replay_manifest(manifest: &Path, dir: &Path) -> Result<Vec<String>, HarnessError> {
    let text = std::fs::read_to_string(manifest)?;
    let cfg = ExperimentConfig::parse(&text)?;
    let res = Resources::load(&cfg)?;
    let result = run_experiment(&cfg, &res)?;
    write_run(&cfg, &result, dir)?;
    let mut bad = Vec::new();
    for (f, h) in manifest_output_hashes(&text) {
        if file_hash(&dir.join(&f))? != h {
            bad.push(f);
        }
    }
    Ok(bad)
}

/// Mean steps over every trial of a run directory.
pub fn run_mean_steps(dir: &Path) -> Result<f64, HarnessError> {
    let mut r = csv::Reader::from_path(dir.join("trials.csv"))?;
    let col = r
        .headers()?
        .iter()
        .position(|h| h == "steps")
        .ok_or_else(|| HarnessError::Config(format!("{}: no steps column", dir.display())))?;
    let mut xs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        xs.push(rec[col].parse::<f64>().map_err(|e| HarnessError::Config(format!("steps: {e}")))?);
    }
    Ok(Stats::of(xs).mean)
}

/// Normalized score of each agent run against the two anchor runs; writes
/// `report.csv` and `report.svg` into `out`.
pub fn report(original: &Path, random: &Path, agents: &[PathBuf], out: &Path) -> Result<Vec<(String, f64, f64)>, HarnessError> {
    let o = run_mean_steps(original)?;
    let r = run_mean_steps(random)?;
    let mut rows = Vec::new();
    for a in agents {
        let m = run_mean_steps(a)?;
        let name = a.file_name().map_or_else(|| a.display().to_string(), |n| n.to_string_lossy().into_owned());
        rows.push((name, m, normalize(m, o, r)?));
    }
    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("report.csv"))?;
    w.write_record(["run", "mean_steps", "original_mean", "random_mean", "normalized"])?;
    for (n, m, s) in &rows {
        w.write_record([n.clone(), format!("{m:.4}"), format!("{o:.4}"), format!("{r:.4}"), format!("{s:.4}")])?;
    }
    w.flush()?;
    let bars: Vec<(String, f64)> = rows.iter().map(|(n, _, s)| (n.clone(), *s)).collect();
    std::fs::write(out.join("report.svg"), score_chart_svg(&bars))?;
    Ok(rows)
}

/// Every trial's steps must lie in [1, cap].
pub fn check_trial(t: &TrialResult, identifies: bool) -> bool {
    (1..=EPISODE_CAP).contains(&t.steps) && (!identifies || t.trace.len() == t.steps as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: DomainKind, agent: AgentKind) -> ExperimentConfig {
        ExperimentConfig { trials: 4, ..ExperimentConfig::new(kind, 7, ExperimentSet::TeamId, agent) }
    }

    #[test]
    fn normalization_examples() {
        assert!((normalize(7.68, 8.57, 86.37).unwrap() - 1.01).abs() < 0.005);
        assert!((normalize(18.77, 42.23, 271.11).unwrap() - 1.10).abs() < 0.005);
        assert_eq!(normalize(8.57, 8.57, 86.37).unwrap(), 1.0);
        assert_eq!(normalize(86.37, 8.57, 86.37).unwrap(), 0.0);
        assert!(matches!(normalize(3.0, 5.0, 5.0), Err(HarnessError::DegenerateNormalization(_))));
    }

    #[test]
    fn config_round_trips_and_rejects_junk() {
        let mut c = cfg(DomainKind::Pp, AgentKind::RecBayes);
        c.classifier = Some("runs/clf.rbck".into());
        c.seed = 42;
        let text = format!("# comment\n{}hash.extra = ff\n", c.to_text());
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
        assert!(ExperimentConfig::parse("domain = lbf\nsize = 7\nset = team_id\nagent = recbayes\n").is_err());
        assert!(ExperimentConfig::parse(&format!("{}bogus = 1\n", cfg(DomainKind::Lbf, AgentKind::RandomPolicy).to_text())).is_err());
        assert!(ExperimentConfig::parse(&cfg(DomainKind::Lbf, AgentKind::RandomPolicy).to_text().replace("trials = 4", "trials = 0")).is_err());
    }

    #[test]
    fn trials_are_deterministic_and_well_formed() {
        for agent in [AgentKind::OriginalTeammate, AgentKind::RandomPolicy, AgentKind::ScriptedOracle] {
            let c = cfg(DomainKind::Lbf, agent);
            let res = Resources::load(&c).unwrap();
            let tt = res.team_tasks[1];
            let a = run_trial(&c, &res, tt, 3).unwrap();
            assert_eq!(a, run_trial(&c, &res, tt, 3).unwrap());
            assert!(check_trial(&a, false));
            assert!(a.trace.is_empty());
        }
    }

    #[test]
    fn experiment_shape_and_summary() {
        let c = cfg(DomainKind::Lbf, AgentKind::OriginalTeammate);
        let res = Resources::load(&c).unwrap();
        let out = run_experiment(&ExperimentConfig { trials: 16, ..c }, &res).unwrap();
        assert_eq!(out.trials.len(), 48);
        for (tt, st) in &out.cells {
            let xs: Vec<f64> = out.trials.iter().filter(|t| t.team_task == *tt).map(|t| t.steps as f64).collect();
            assert_eq!(st.n, 16);
            assert!((st.mean - xs.iter().sum::<f64>() / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn replaced_slot_is_uniform() {
        // chi-squared with 3 degrees of freedom; 11.34 is the 1% critical value
        let c = ExperimentConfig { trials: 100, ..cfg(DomainKind::Lbf, AgentKind::RandomPolicy) };
        let res = Resources::load(&c).unwrap();
        let mut counts = [0usize; 4];
        for tt in &res.team_tasks {
            for i in 0..c.trials {
                counts[AdHocEpisode::random_slot(&c.grid(), trial_seed(c.seed, tt.k, i))] += 1;
            }
        }
        let n: usize = counts.iter().sum();
        let e = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        assert!(n >= 200 && chi2 < 11.34, "{counts:?} chi2 {chi2}");
    }

    #[test]
    fn random_policy_takes_tens_of_steps() {
        let c = ExperimentConfig { trials: 40, ..cfg(DomainKind::Lbf, AgentKind::RandomPolicy) };
        let res = Resources::load(&c).unwrap();
        let out = run_experiment(&c, &res).unwrap();
        assert!((10.0..300.0).contains(&out.overall.mean), "{}", out.overall.mean);
    }

    #[test]
    fn identification_helpers() {
        let one_hot = vec![Posterior(vec![0.0, 1.0, 0.0])];
        assert_eq!(identified_team_task(&one_hot), Some((2, false)));
        assert_eq!(identified_team_task(&[Posterior::uniform(3)]), Some((1, true)));
        assert_eq!(identified_team_task(&[]), None);
        let trace = vec![
            Posterior(vec![0.6, 0.4]),
            Posterior(vec![0.3, 0.7]),
            Posterior(vec![0.6, 0.4]),
            Posterior(vec![0.2, 0.8]),
            Posterior(vec![0.1, 0.9]),
        ];
        assert_eq!(steps_to_lock(&trace), Some(4));
        assert_eq!(steps_to_lock(&trace[..1]), Some(1));
    }

    #[test]
    fn trace_files_are_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let (p, m) = (dir.path().join("t.csv"), dir.path().join("m.csv"));
        emit_posterior_trace(&[], &p, &m).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "trial,step,k,prob,is_true\n");
        assert_eq!(std::fs::read_to_string(&m).unwrap(), "step,mean_true_prob,mean_false_prob_sum\n");
        let tt = ExperimentSet::TeamId.team_tasks()[2];
        let trial = TrialResult {
            team_task: tt,
            trial: 0,
            seed: 0,
            slot: 1,
            steps: 2,
            solved: true,
            trace: vec![Posterior(vec![0.2, 0.3, 0.5]), Posterior(vec![0.1, 0.1, 0.8])],
        };
        let curve = emit_posterior_trace(&[trial], &p, &m).unwrap();
        assert_eq!(curve.len(), 2);
        assert!((curve[1].0 - 0.8).abs() < 1e-12 && (curve[1].1 - 0.2).abs() < 1e-12);
        let mut r = csv::Reader::from_path(&p).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 6);
        for step in ["1", "2"] {
            let s: f64 = rows.iter().filter(|r| &r[1] == step).map(|r| r[3].parse::<f64>().unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
