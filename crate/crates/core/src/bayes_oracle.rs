//! Exact multi-model Bayesian filter over tabular POMDPs, and exhaustive
//! construction of such models for enumeration-scale grids.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use log::warn;
use thiserror::Error;

use crate::classifier::Posterior;
use crate::env::{observe, reset_with, step, Action, EnvError, EnvState, GridConfig, Observation};
use crate::rng::enumerate_outcomes;
use crate::teammates::{team_act, TeamTaskId};

/// Default bound on the number of joint states an enumeration may create.
pub const STATE_CAP: usize = 20_000;
const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("observation has zero likelihood under the model")]
    ZeroLikelihood,
    #[error("evidence has zero likelihood under every model")]
    DegenerateEvidence,
    #[error("enumeration exceeds the cap of {cap} states")]
    Infeasible { cap: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Sparse row: (index, probability) pairs.
pub type Row = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPomdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_obs: usize,
    /// `transition[x][a]` is the distribution over successors y.
    pub transition: Vec<Vec<Row>>,
    /// `observation[y][a]` is the distribution over observations z.
    pub observation: Vec<Vec<Row>>,
    pub reward: Vec<Vec<f64>>,
    pub b0: Vec<f64>,
}

fn check_simplex(what: &str, v: impl Iterator<Item = f64>) -> Result<(), OracleError> {
    let mut sum = 0.0;
    for p in v {
        if !(0.0..=1.0 + ROW_TOL).contains(&p) {
            return Err(OracleError::InvalidModel(format!("{what}: entry {p} outside [0, 1]")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(OracleError::InvalidModel(format!("{what}: sums to {sum}")));
    }
    Ok(())
}

impl TabularPomdp {
    pub fn validate(&self) -> Result<(), OracleError> {
        let dims = |name: &str, rows: &Vec<Vec<Row>>, n: usize| {
            if rows.len() != self.n_states || rows.iter().any(|r| r.len() != self.n_actions) {
                return Err(OracleError::InvalidModel(format!("{name} table has the wrong shape")));
            }
            if rows.iter().flatten().flatten().any(|&(i, _)| i >= n) {
                return Err(OracleError::InvalidModel(format!("{name} table indexes past {n}")));
            }
            Ok(())
        };
        dims("transition", &self.transition, self.n_states)?;
        dims("observation", &self.observation, self.n_obs)?;
        if self.b0.len() != self.n_states
            || self.reward.len() != self.n_states
            || self.reward.iter().any(|r| r.len() != self.n_actions)
        {
            return Err(OracleError::InvalidModel("b0 or reward has the wrong shape".into()));
        }
        check_simplex("b0", self.b0.iter().copied())?;
        for x in 0..self.n_states {
            for a in 0..self.n_actions {
                check_simplex(&format!("P[{x}][{a}]"), self.transition[x][a].iter().map(|e| e.1))?;
                check_simplex(&format!("O[{x}][{a}]"), self.observation[x][a].iter().map(|e| e.1))?;
            }
        }
        Ok(())
    }

    /// One nonzero entry per line: `P x a y p`, `O y a z p`, `R x a r`, `B x p`.
    pub fn dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        for (x, p) in self.b0.iter().enumerate().filter(|(_, p)| **p > 0.0) {
            writeln!(w, "B {x} {p}")?;
        }
        for x in 0..self.n_states {
            for a in 0..self.n_actions {
                for &(y, p) in &self.transition[x][a] {
                    writeln!(w, "P {x} {a} {y} {p}")?;
                }
                for &(z, p) in &self.observation[x][a] {
                    writeln!(w, "O {x} {a} {z} {p}")?;
                }
                if self.reward[x][a] != 0.0 {
                    writeln!(w, "R {x} {a} {}", self.reward[x][a])?;
                }
            }
        }
        Ok(())
    }
}

/// Distribution over a model's states.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief(pub Vec<f64>);

/// Unnormalized successor belief `O(z|y,a) Σ_x P(y|x,a) b(x)`.
fn predict_correct(m: &TabularPomdp, b: &Belief, a: usize, z: usize) -> Result<Vec<f64>, OracleError> {
    if a >= m.n_actions || z >= m.n_obs || b.0.len() != m.n_states {
        return Err(OracleError::Index(format!("action {a}, observation {z}, belief of {}", b.0.len())));
    }
    let mut next = vec![0.0; m.n_states];
    for (x, &bx) in b.0.iter().enumerate().filter(|(_, bx)| **bx > 0.0) {
        for &(y, p) in &m.transition[x][a] {
            next[y] += p * bx;
        }
    }
    for (y, v) in next.iter_mut().enumerate() {
        if *v > 0.0 {
            *v *= m.observation[y][a].iter().find(|e| e.0 == z).map_or(0.0, |e| e.1);
        }
    }
    Ok(next)
}

/// Bayes update of one model's belief after action `a` and observation `z`.
/// Returns the new belief and the evidence likelihood; an observation that
/// is impossible under the model yields [`OracleError::ZeroLikelihood`].
pub fn belief_update(m: &TabularPomdp, b: &Belief, a: usize, z: usize) -> Result<(Belief, f64), OracleError> {
    let mut next = predict_correct(m, b, a, z)?;
    let norm: f64 = next.iter().sum();
    if norm <= 0.0 {
        return Err(OracleError::ZeroLikelihood);
    }
    next.iter_mut().for_each(|v| *v /= norm);
    Ok((Belief(next), norm))
}

/// Joint update of the posterior over models and of every model's belief.
///
/// `pi_prob` is the agent's own probability of `a`; it is shared by all
/// models and cancels in the normalization. A model under which the
/// evidence is impossible gets posterior 0 and keeps its belief.
pub fn posterior_update(
    models: &[TabularPomdp],
    beliefs: &[Belief],
    p: &Posterior,
    a: usize,
    z: usize,
    pi_prob: f64,
) -> Result<(Posterior, Vec<Belief>), OracleError> {
    if models.len() != beliefs.len() || models.len() != p.0.len() {
        return Err(OracleError::Index(format!(
            "{} models, {} beliefs, posterior of {}",
            models.len(),
            beliefs.len(),
            p.0.len()
        )));
    }
    if !(pi_prob > 0.0 && pi_prob <= 1.0) {
        return Err(OracleError::Index(format!("policy probability {pi_prob} outside (0, 1]")));
    }
    let mut post = vec![0.0; models.len()];
    let mut next = beliefs.to_vec();
    for k in 0..models.len() {
        if p.0[k] <= 0.0 {
            continue;
        }
        match belief_update(&models[k], &beliefs[k], a, z) {
            Ok((b, like)) => {
                post[k] = p.0[k] * like * pi_prob;
                next[k] = b;
            }
            Err(OracleError::ZeroLikelihood) => {}
            Err(e) => return Err(e),
        }
    }
    let rho: f64 = post.iter().sum();
    if rho <= 0.0 {
        return Err(OracleError::DegenerateEvidence);
    }
    post.iter_mut().for_each(|v| *v /= rho);
    Ok((Posterior(post), next))
}

/// Running exact filter for one episode.
#[derive(Debug, Clone)]
pub struct ExactFilter {
    pub models: Vec<TabularPomdp>,
    pub prior: Posterior,
    pub posterior: Posterior,
    pub beliefs: Vec<Belief>,
}

impl ExactFilter {
    pub fn new(models: Vec<TabularPomdp>) -> Self {
        let k = models.len();
        let beliefs = models.iter().map(|m| Belief(m.b0.clone())).collect();
        ExactFilter { models, prior: Posterior::uniform(k), posterior: Posterior::uniform(k), beliefs }
    }

    pub fn reset(&mut self) {
        self.posterior = self.prior.clone();
        self.beliefs = self.models.iter().map(|m| Belief(m.b0.clone())).collect();
    }

    /// Applies one piece of evidence. Evidence impossible under every model
    /// resets the filter to its prior and returns `false`.
    pub fn observe(&mut self, a: usize, z: Option<usize>, pi_prob: f64) -> Result<bool, OracleError> {
        let res = match z {
            Some(z) => posterior_update(&self.models, &self.beliefs, &self.posterior, a, z, pi_prob),
            None => Err(OracleError::DegenerateEvidence),
        };
        match res {
            Ok((p, b)) => {
                self.posterior = p;
                self.beliefs = b;
                Ok(true)
            }
            Err(OracleError::DegenerateEvidence) => {
                warn!("evidence impossible under every model; filter reset to its prior");
                self.reset();
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }
}

/// Shared numbering of observations across enumerated models.
#[derive(Debug, Clone, Default)]
pub struct ObsCodebook {
    index: HashMap<Observation, usize>,
    pub observations: Vec<Observation>,
}

impl ObsCodebook {
    pub fn intern(&mut self, z: Observation) -> usize {
        let next = self.observations.len();
        *self.index.entry(z).or_insert_with(|| {
            self.observations.push(z);
            next
        })
    }

    pub fn get(&self, z: &Observation) -> Option<usize> {
        self.index.get(z).copied()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// An enumerated model and the joint state behind every index.
#[derive(Debug, Clone)]
pub struct EnumeratedModel {
    pub pomdp: TabularPomdp,
    /// (ad hoc slot, state without clock) per state index.
    pub states: Vec<(usize, EnvState)>,
}

/// Builds the exact POMDP seen by an ad hoc agent in one of `slots` (uniform
/// prior over them) when the rest of the team plays `team_task`.
///
/// Reachable states are found breadth-first from the support of the reset
/// distribution; team randomness is enumerated exactly. Terminal states are
/// absorbing. Observation indices come from `codebook`; `n_obs` is the
/// codebook size after enumeration, so models built in sequence should be
/// widened with [`widen_observations`].
pub fn enumerate_model(
    config: &GridConfig,
    team_task: TeamTaskId,
    slots: &[usize],
    codebook: &mut ObsCodebook,
    cap: usize,
) -> Result<EnumeratedModel, OracleError> {
    config.validate()?;
    if slots.is_empty() || slots.iter().any(|&s| s >= config.n_agents) {
        return Err(OracleError::Index(format!("slots {slots:?} for {} agents", config.n_agents)));
    }
    let mut index: HashMap<(usize, EnvState), usize> = HashMap::new();
    let mut states: Vec<(usize, EnvState)> = Vec::new();
    let mut b0: Vec<f64> = Vec::new();
    let mut queue = VecDeque::new();
    let mut intern = |key: (usize, EnvState),
                      states: &mut Vec<(usize, EnvState)>,
                      queue: &mut VecDeque<usize>|
     -> Result<usize, OracleError> {
        if let Some(&i) = index.get(&key) {
            return Ok(i);
        }
        if states.len() >= cap {
            return Err(OracleError::Infeasible { cap });
        }
        let i = states.len();
        index.insert(key.clone(), i);
        states.push(key);
        queue.push_back(i);
        Ok(i)
    };

    let resets = enumerate_outcomes(|c| reset_with(config, c).ok());
    for &slot in slots {
        for (s, p) in &resets {
            let i = intern((slot, s.without_clock()), &mut states, &mut queue)?;
            if b0.len() <= i {
                b0.resize(i + 1, 0.0);
            }
            b0[i] += p / slots.len() as f64;
        }
    }

    let mut transition: Vec<Vec<Row>> = Vec::new();
    let mut reward: Vec<Vec<f64>> = Vec::new();
    let mut obs_of: Vec<usize> = Vec::new();
    while let Some(x) = queue.pop_front() {
        let (slot, s) = states[x].clone();
        obs_of.push(codebook.intern(observe(config, &s, slot)));
        let mut rows = Vec::with_capacity(Action::COUNT);
        let mut rewards = Vec::with_capacity(Action::COUNT);
        let team = if s.is_terminal() {
            Vec::new()
        } else {
            enumerate_outcomes(|c| Some(team_act(config, &s, team_task.strategy, &team_task.task, slot, c)))
        };
        for a in Action::ALL {
            if s.is_terminal() {
                rows.push(vec![(x, 1.0)]);
                rewards.push(0.0);
                continue;
            }
            let mut row: Row = Vec::new();
            let mut r = 0.0;
            for (acts, p) in &team {
                let mut joint = vec![Action::NoOp; config.n_agents];
                joint[slot] = a;
                for &(i, ai) in acts {
                    joint[i] = ai;
                }
                let out = step(config, &s, &joint)?;
                r += p * out.rewards[slot];
                let y = intern((slot, out.state.without_clock()), &mut states, &mut queue)?;
                match row.iter_mut().find(|e| e.0 == y) {
                    Some(e) => e.1 += p,
                    None => row.push((y, *p)),
                }
            }
            row.sort_by_key(|e| e.0);
            rows.push(row);
            rewards.push(r);
        }
        transition.push(rows);
        reward.push(rewards);
    }
    let n_states = states.len();
    b0.resize(n_states, 0.0);
    let observation = obs_of.iter().map(|&z| vec![vec![(z, 1.0)]; Action::COUNT]).collect();
    let pomdp = TabularPomdp {
        n_states,
        n_actions: Action::COUNT,
        n_obs: codebook.len(),
        transition,
        observation,
        reward,
        b0,
    };
    Ok(EnumeratedModel { pomdp, states })
}

/// Sets every model's observation count to the codebook's final size.
pub fn widen_observations(models: &mut [EnumeratedModel], codebook: &ObsCodebook) {
    for m in models {
        m.pomdp.n_obs = codebook.len();
    }
}
