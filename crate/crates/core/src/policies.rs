//! Best-response policies for known team-tasks, the random baseline, and the
//! posterior-weighted mixture over a policy library.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use log::debug;
use rand::Rng;
use thiserror::Error;

use crate::binio::{FormatError, Reader, Writer};
use crate::env::{
    channel_teammate, Action, Cell, DomainKind, EnvError, GridConfig, Observation, FOV, TARGET_CHANNEL,
    WALL_CHANNEL,
};
use crate::episode::AdHocEpisode;
use crate::rng::{self, purpose};
use crate::teammates::{
    path_moves, strategy_action, unstick_distribution, Bounds, FirstChoice, PathStep, TargetView, TeamTaskId, View,
};

/// Steps after which an unrefreshed memory of an entity is dropped.
pub const MEMORY_HORIZON: u32 = 20;
/// Steps spent motionless beside a target before the agent gives up on it.
const STALL_LIMIT: u32 = 8;
/// Steps an abandoned target is ignored.
const AVOID_STEPS: u32 = 25;
/// Search radius used in place of grid edges the agent has not seen.
const UNKNOWN_EDGE_HORIZON: i32 = 10;
/// Greedy-action noise of a learned table at evaluation time.
pub const EPSILON_EVAL: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("action distribution is not a simplex vector: {0:?}")]
    NotSimplex([f64; Action::COUNT]),
    #[error("posterior has {got} entries for {expected} policies")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Probability vector over the six actions, indexed by [`Action::index`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDist(pub [f64; Action::COUNT]);

impl ActionDist {
    pub fn uniform() -> Self {
        ActionDist([1.0 / Action::COUNT as f64; Action::COUNT])
    }

    pub fn one_hot(a: Action) -> Self {
        let mut p = [0.0; Action::COUNT];
        p[a.index()] = 1.0;
        ActionDist(p)
    }

    pub fn prob(&self, a: Action) -> f64 {
        self.0[a.index()]
    }

    /// Checks non-negativity, finiteness and unit sum (within 1e-9).
    pub fn validate(&self) -> Result<(), PolicyError> {
        let ok = self.0.iter().all(|p| p.is_finite() && *p >= 0.0)
            && (self.0.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(PolicyError::NotSimplex(self.0))
        }
    }

    /// Most likely action; ties go to the lowest action index.
    pub fn argmax(&self) -> Action {
        let mut best = 0;
        for i in 1..Action::COUNT {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        Action::ALL[best]
    }
}

/// Inverse-CDF draw from `dist` using one uniform variate.
pub fn sample_action(dist: &ActionDist, rng: &mut impl Rng) -> Result<Action, PolicyError> {
    dist.validate()?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = Action::NoOp;
    for a in Action::ALL {
        let p = dist.prob(a);
        if p > 0.0 {
            acc += p;
            last = a;
            if u < acc {
                return Ok(a);
            }
        }
    }
    // rounding left a sliver above the accumulated mass
    Ok(last)
}

/// Convex combination of the policies' distributions under `posterior`.
pub fn mixture_action(policies: &[PolicyHandle], posterior: &[f64]) -> Result<ActionDist, PolicyError> {
    if policies.len() != posterior.len() {
        return Err(PolicyError::LengthMismatch { expected: policies.len(), got: posterior.len() });
    }
    let mut out = [0.0; Action::COUNT];
    for (policy, &w) in policies.iter().zip(posterior) {
        let d = policy.distribution();
        for (o, p) in out.iter_mut().zip(d.0) {
            *o += w * p;
        }
    }
    Ok(ActionDist(out))
}

/// Egocentric record of what the agent has seen, in coordinates relative to
/// its starting cell.
#[derive(Debug, Clone)]
struct EgoMemory {
    kind: DomainKind,
    n_agents: usize,
    slot: usize,
    t: u32,
    pos: Cell,
    /// Inclusive limits of the grid, once an edge has been seen.
    min_row: Option<i32>,
    max_row: Option<i32>,
    min_col: Option<i32>,
    max_col: Option<i32>,
    targets: HashMap<Cell, u32>,
    teammates: Vec<Option<(Cell, u32)>>,
    last_obs: Observation,
    /// Targets abandoned after a stall, with the step the ban ends.
    avoid: HashMap<Cell, u32>,
    held: u32,
}

fn window_cell(pos: Cell, r: usize, c: usize) -> Cell {
    let half = (FOV / 2) as i32;
    Cell::new(pos.row + r as i32 - half, pos.col + c as i32 - half)
}

impl EgoMemory {
    fn new(kind: DomainKind, n_agents: usize, slot: usize, obs: Observation) -> Self {
        let mut m = EgoMemory {
            kind,
            n_agents,
            slot,
            t: 0,
            pos: Cell::new(0, 0),
            min_row: None,
            max_row: None,
            min_col: None,
            max_col: None,
            targets: HashMap::new(),
            teammates: vec![None; n_agents],
            last_obs: obs,
            avoid: HashMap::new(),
            held: 0,
        };
        m.absorb(obs);
        m
    }

    fn in_window(&self, c: Cell) -> bool {
        let half = (FOV / 2) as i32;
        c.chebyshev(self.pos) <= half
    }

    fn absorb(&mut self, obs: Observation) {
        let half = FOV / 2;
        let row_walls = |r: usize| (0..FOV).all(|c| obs.get(WALL_CHANNEL, r, c));
        let col_walls = |c: usize| (0..FOV).all(|r| obs.get(WALL_CHANNEL, r, c));
        let p = self.pos;
        let h = half as i32;
        // the agent's own row and column are always in bounds, so a fully
        // walled window row or column lies beyond an edge
        self.min_row = match (0..half).rev().find(|&r| row_walls(r)) {
            Some(r) => Some(p.row + r as i32 - h + 1),
            None => self.min_row.filter(|&b| b <= p.row - h),
        };
        self.max_row = match (half + 1..FOV).find(|&r| row_walls(r)) {
            Some(r) => Some(p.row + r as i32 - h - 1),
            None => self.max_row.filter(|&b| b >= p.row + h),
        };
        self.min_col = match (0..half).rev().find(|&c| col_walls(c)) {
            Some(c) => Some(p.col + c as i32 - h + 1),
            None => self.min_col.filter(|&b| b <= p.col - h),
        };
        self.max_col = match (half + 1..FOV).find(|&c| col_walls(c)) {
            Some(c) => Some(p.col + c as i32 - h - 1),
            None => self.max_col.filter(|&b| b >= p.col + h),
        };

        let pos = self.pos;
        self.targets.retain(|c, _| c.chebyshev(pos) > h);
        for r in 0..FOV {
            for c in 0..FOV {
                if obs.get(TARGET_CHANNEL, r, c) {
                    self.targets.insert(window_cell(pos, r, c), self.t);
                }
            }
        }
        for ch in 0..self.n_agents - 1 {
            let j = channel_teammate(self.slot, ch);
            let seen = (0..FOV * FOV).find(|&i| obs.get(ch, i / FOV, i % FOV));
            match seen {
                Some(i) => self.teammates[j] = Some((window_cell(pos, i / FOV, i % FOV), self.t)),
                None => {
                    if let Some((c, _)) = self.teammates[j] {
                        if self.in_window(c) {
                            self.teammates[j] = None;
                        }
                    }
                }
            }
        }
        let t = self.t;
        self.targets.retain(|_, seen| t - *seen <= MEMORY_HORIZON);
        for m in self.teammates.iter_mut() {
            if matches!(m, Some((_, seen)) if t - *seen > MEMORY_HORIZON) {
                *m = None;
            }
        }
        self.last_obs = obs;
    }

    /// Count of static-feature bits that disagree between the previous view
    /// shifted by `(dr, dc)` and the new view.
    fn mismatch(&self, next: &Observation, (dr, dc): (i32, i32)) -> u32 {
        let mut channels = vec![WALL_CHANNEL];
        if self.kind == DomainKind::Lbf {
            channels.push(TARGET_CHANNEL);
        }
        let mut miss = 0;
        for r in 0..FOV as i32 {
            for c in 0..FOV as i32 {
                let (sr, sc) = (r + dr, c + dc);
                if !(0..FOV as i32).contains(&sr) || !(0..FOV as i32).contains(&sc) {
                    continue;
                }
                for &ch in &channels {
                    let old = self.last_obs.get(ch, sr as usize, sc as usize);
                    let new = next.get(ch, r as usize, c as usize);
                    // a target may vanish when loaded or captured
                    if old != new && !(ch == TARGET_CHANNEL && old && !new) {
                        miss += 1;
                    }
                }
            }
        }
        // every other agent moves at most one cell per step
        miss += self.teammate_shifts(next, (dr, dc)).filter(|&d| d > 1).count() as u32;
        miss
    }

    /// Displacement of each teammate seen in both views, if the agent itself
    /// moved by `(dr, dc)`.
    fn teammate_shifts<'a>(&'a self, next: &'a Observation, (dr, dc): (i32, i32)) -> impl Iterator<Item = i32> + 'a {
        let f = FOV as i32;
        (0..self.n_agents - 1).filter_map(move |ch| {
            let before = (0..FOV * FOV).find(|&i| self.last_obs.get(ch, i / FOV, i % FOV))?;
            let after = (0..FOV * FOV).find(|&i| next.get(ch, i / FOV, i % FOV))?;
            let (p, q) = ((before as i32 / f, before as i32 % f), (after as i32 / f, after as i32 % f));
            Some((dr + q.0 - p.0).abs() + (dc + q.1 - p.1).abs())
        })
    }

    /// Did `action` move the agent, judged from the view before and after?
    fn moved(&self, action: Action, next: &Observation) -> bool {
        if !action.is_move() {
            return false;
        }
        let (dr, dc) = action.delta();
        let half = (FOV / 2) as i32;
        let (r, c) = ((half + dr) as usize, (half + dc) as usize);
        if self.last_obs.get(WALL_CHANNEL, r, c) || self.last_obs.get(TARGET_CHANNEL, r, c) {
            return false;
        }
        let go = self.mismatch(next, (dr, dc));
        let stay = self.mismatch(next, (0, 0));
        match go.cmp(&stay) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            // no static evidence either way: assume success unless a
            // teammate stood in the destination
            std::cmp::Ordering::Equal => !(0..self.n_agents - 1).any(|ch| self.last_obs.get(ch, r, c)),
        }
    }

    fn forget_bounds(&mut self) {
        self.min_row = None;
        self.max_row = None;
        self.min_col = None;
        self.max_col = None;
    }

    fn advance(&mut self, action: Action, next: Observation) {
        let moved = self.moved(action, &next);
        if moved {
            self.pos = self.pos.offset(action.delta());
        }
        let teammates_still = (0..self.n_agents - 1).all(|ch| {
            (0..FOV * FOV).all(|i| self.last_obs.get(ch, i / FOV, i % FOV) == next.get(ch, i / FOV, i % FOV))
        });
        self.t += 1;
        self.absorb(next);
        // a target nobody is coming to join us at is probably not the team's choice
        let pos = self.pos;
        let beside = |c: &Cell| c.manhattan(pos) == 1;
        if !moved && teammates_still && self.targets.keys().any(beside) {
            self.held += 1;
        } else {
            self.held = 0;
        }
        if self.held >= STALL_LIMIT {
            let until = self.t + AVOID_STEPS;
            for &c in self.targets.keys().filter(|c| beside(c)) {
                self.avoid.insert(c, until);
            }
            self.held = 0;
        }
        let t = self.t;
        self.avoid.retain(|_, until| *until > t);
    }

    /// Everything remembered, as a planning view. Abandoned targets are
    /// left out unless `with_abandoned`.
    fn view(&self, with_abandoned: bool) -> View {
        let mut agents: Vec<Option<Cell>> = self.teammates.iter().map(|m| m.map(|(c, _)| c)).collect();
        agents[self.slot] = Some(self.pos);
        let mut targets: Vec<TargetView> =
            self.targets.keys().filter(|c| with_abandoned || !self.avoid.contains_key(c)).map(|&pos| TargetView { pos, level: None }).collect();
        targets.sort_by_key(|t| (t.pos.row, t.pos.col));
        let h = UNKNOWN_EDGE_HORIZON;
        View {
            kind: self.kind,
            agents,
            targets,
            bounds: Bounds::Rect {
                rows: (self.min_row.unwrap_or(self.pos.row - h), self.max_row.unwrap_or(self.pos.row + h)),
                cols: (self.min_col.unwrap_or(self.pos.col - h), self.max_col.unwrap_or(self.pos.col + h)),
            },
        }
    }
}

/// Plays a team-task's own strategy from the ad hoc slot, seeing only its
/// observation stream.
#[derive(Debug, Clone)]
pub struct ScriptedBestResponse {
    pub team_task: TeamTaskId,
    kind: DomainKind,
    n_agents: usize,
    memory: Option<EgoMemory>,
    /// Lawnmower state used while no target is known.
    sweep_row: Option<i32>,
    sweep_east: bool,
}

impl ScriptedBestResponse {
    fn distribution(&self) -> ActionDist {
        let Some(m) = &self.memory else {
            return ActionDist::one_hot(Action::NoOp);
        };
        let view = m.view(false);
        let a = if view.targets.is_empty() {
            self.sweep_action(m)
        } else {
            strategy_action(&view, m.slot, self.team_task.strategy, &self.team_task.task, &mut FirstChoice)
        };
        // abandoned targets still block movement
        ActionDist(unstick_distribution(&m.view(true), m.slot, a))
    }

    /// Next lawnmower step: find the top and left edges, then sweep lanes
    /// `FOV` rows apart, routing around known obstacles.
    fn sweep_action(&self, m: &EgoMemory) -> Action {
        let h = UNKNOWN_EDGE_HORIZON;
        let half = (FOV / 2) as i32;
        let p = m.pos;
        let span = |lo: i32, hi: i32| lo.min(hi)..=hi.max(lo);
        let (direct, goals): (Action, Vec<Cell>) = match (m.min_row, m.min_col) {
            (None, _) => (Action::North, vec![Cell::new(p.row - h, p.col)]),
            (Some(_), None) => (Action::West, vec![Cell::new(p.row, p.col - h)]),
            (Some(top), Some(left)) => {
                // head for the far end of the current lane
                let lane = self.lane(m, top);
                let right = m.max_col.unwrap_or(p.col + h);
                let direct = match p.row.cmp(&lane) {
                    std::cmp::Ordering::Less => Action::South,
                    std::cmp::Ordering::Greater => Action::North,
                    _ if self.sweep_east => Action::East,
                    _ => Action::West,
                };
                let ends = if self.sweep_east { span(right - half, right) } else { span(left, left + half) };
                (direct, ends.map(|c| Cell::new(lane, c)).collect())
            }
        };
        let view = m.view(true);
        let blocked = |c: Cell| view.has_target(c) || view.agent_at(c).is_some_and(|j| j != m.slot);
        match path_moves(&view, p, &goals, blocked) {
            PathStep::Moves(moves) => moves[0],
            PathStep::Arrived => Action::South,
            PathStep::NoPath => direct,
        }
    }

    /// Row currently swept, kept inside the known edges.
    fn lane(&self, m: &EgoMemory, top: i32) -> i32 {
        let half = (FOV / 2) as i32;
        let lane = self.sweep_row.unwrap_or(top + half);
        match m.max_row {
            Some(bottom) => lane.min(bottom - half).max(top + half),
            None => lane,
        }
    }

    /// Moves to the next lane once the current one has been swept.
    fn update_sweep(&mut self) {
        let Some(m) = &self.memory else { return };
        let (Some(top), Some(left)) = (m.min_row, m.min_col) else {
            return;
        };
        let half = (FOV / 2) as i32;
        let lane = self.lane(m, top);
        self.sweep_row = Some(lane);
        if m.pos.row != lane {
            return;
        }
        let at_end = if self.sweep_east {
            m.max_col.is_some_and(|right| m.pos.col >= right - half)
        } else {
            m.pos.col <= left + half
        };
        if !at_end {
            return;
        }
        self.sweep_east = !self.sweep_east;
        let next = match m.max_row {
            Some(bottom) if lane >= bottom - half => None,
            Some(bottom) => Some((lane + FOV as i32).min(bottom - half)),
            None => Some(lane + FOV as i32),
        };
        self.sweep_row = next;
        if next.is_none() {
            // a whole sweep found nothing: the edges may come from a
            // dead-reckoning slip, so relearn them
            if let Some(m) = self.memory.as_mut() {
                m.forget_bounds();
            }
        }
    }
}

/// Key of a learned table: packed observation then previous action byte
/// (`NO_ACTION` at the first step).
pub type QKey = [u8; 17];
pub const NO_ACTION: u8 = 0xFF;

pub fn q_key(obs: &Observation, prev: Option<Action>) -> QKey {
    let mut k = [0u8; 17];
    k[..16].copy_from_slice(&obs.pack());
    k[16] = prev.map_or(NO_ACTION, |a| a.to_byte());
    k
}

/// Action-value table keyed by (observation, previous action).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable {
    pub entries: BTreeMap<QKey, [f64; Action::COUNT]>,
}

const QTABLE_MAGIC: [u8; 4] = *b"RBQP";
const QTABLE_VERSION: u8 = 1;

impl QTable {
    pub fn get(&self, key: &QKey) -> Option<&[f64; Action::COUNT]> {
        self.entries.get(key)
    }

    /// One temporal-difference control update.
    pub fn update(&mut self, key: QKey, a: Action, reward: f64, next: Option<QKey>, alpha: f64, gamma: f64) {
        let bootstrap = next
            .and_then(|k| self.entries.get(&k))
            .map_or(0.0, |q| q.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let q = self.entries.entry(key).or_insert([0.0; Action::COUNT]);
        q[a.index()] += alpha * (reward + gamma * bootstrap - q[a.index()]);
    }

    /// Uniform over the greedy actions, mixed with `epsilon` uniform noise.
    /// Unseen keys give the uniform distribution.
    pub fn policy(&self, key: &QKey, epsilon: f64) -> ActionDist {
        let Some(q) = self.entries.get(key) else {
            return ActionDist::uniform();
        };
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..Action::COUNT).filter(|&i| q[i] == best).collect();
        let mut p = [epsilon / Action::COUNT as f64; Action::COUNT];
        for &i in &ties {
            p[i] += (1.0 - epsilon) / ties.len() as f64;
        }
        ActionDist(p)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&QTABLE_MAGIC);
        w.u8(QTABLE_VERSION);
        w.u32(17);
        w.u64(self.entries.len() as u64);
        for (k, q) in &self.entries {
            w.bytes(k);
            for v in q {
                w.f64(*v);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(QTABLE_MAGIC)?;
        let version = r.u8()?;
        if version != QTABLE_VERSION {
            return Err(FormatError::BadVersion(version));
        }
        let width = r.u32()?;
        if width != 17 {
            return Err(FormatError::Invalid(format!("key width {width}, expected 17")));
        }
        let n = r.u64()?;
        let mut entries = BTreeMap::new();
        let mut prev: Option<QKey> = None;
        for _ in 0..n {
            let k: QKey = r.array()?;
            if prev.is_some_and(|p| p >= k) {
                return Err(FormatError::Invalid("keys not strictly increasing".into()));
            }
            let mut q = [0.0; Action::COUNT];
            for v in q.iter_mut() {
                *v = r.f64()?;
            }
            entries.insert(k, q);
            prev = Some(k);
        }
        r.finish()?;
        Ok(QTable { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct TabularPolicy {
    pub table: Arc<QTable>,
    pub epsilon: f64,
    key: Option<QKey>,
}

#[derive(Debug, Clone)]
pub enum PolicyHandle {
    Scripted(ScriptedBestResponse),
    Tabular(TabularPolicy),
    Random,
}

pub fn scripted_best_response(team_task: TeamTaskId, kind: DomainKind, n_agents: usize) -> PolicyHandle {
    PolicyHandle::Scripted(ScriptedBestResponse {
        team_task,
        kind,
        n_agents,
        memory: None,
        sweep_row: None,
        sweep_east: true,
    })
}

pub fn tabular_policy(table: Arc<QTable>) -> PolicyHandle {
    PolicyHandle::Tabular(TabularPolicy { table, epsilon: EPSILON_EVAL, key: None })
}

pub fn random_policy() -> PolicyHandle {
    PolicyHandle::Random
}

impl PolicyHandle {
    /// Starts an episode in `slot` with the first observation.
    pub fn begin(&mut self, slot: usize, obs: Observation) {
        match self {
            PolicyHandle::Scripted(s) => {
                s.memory = Some(EgoMemory::new(s.kind, s.n_agents, slot, obs));
                s.sweep_row = None;
                s.sweep_east = true;
                s.update_sweep();
            }
            PolicyHandle::Tabular(t) => t.key = Some(q_key(&obs, None)),
            PolicyHandle::Random => {}
        }
    }

    /// Action distribution given everything seen so far.
    pub fn distribution(&self) -> ActionDist {
        match self {
            PolicyHandle::Scripted(s) => s.distribution(),
            PolicyHandle::Tabular(t) => match &t.key {
                Some(k) => t.table.policy(k, t.epsilon),
                None => ActionDist::uniform(),
            },
            PolicyHandle::Random => ActionDist::uniform(),
        }
    }

    /// Records the executed action and the observation that followed it.
    pub fn advance(&mut self, executed: Action, next: Observation) {
        match self {
            PolicyHandle::Scripted(s) => {
                if let Some(m) = s.memory.as_mut() {
                    m.advance(executed, next);
                }
                s.update_sweep();
            }
            PolicyHandle::Tabular(t) => t.key = Some(q_key(&next, Some(executed))),
            PolicyHandle::Random => {}
        }
    }
}

/// Linearly decaying exploration rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        if self.decay_episodes == 0 || episode >= self.decay_episodes {
            return self.end;
        }
        let f = episode as f64 / self.decay_episodes as f64;
        self.start + (self.end - self.start) * f
    }
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { start: 1.0, end: 0.05, decay_episodes: 1000 }
    }
}

/// Settings of [`tabular_learn`] beyond the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnConfig {
    pub episodes: usize,
    pub learn_rate: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    /// Learning episodes are truncated here.
    pub max_steps: u32,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            episodes: 2000,
            learn_rate: 0.2,
            gamma: 0.95,
            epsilon: EpsilonSchedule::default(),
            max_steps: 128,
            seed: 0,
        }
    }
}

/// Q-learning in the ad hoc slot of `team_task`. Every step costs -1 so the
/// greedy policy minimises time to completion.
pub fn tabular_learn(config: &GridConfig, team_task: TeamTaskId, learn: &LearnConfig) -> Result<QTable, PolicyError> {
    let mut table = QTable::default();
    for e in 0..learn.episodes {
        let seed = rng::derive(learn.seed, &[purpose::LEARN, e as u64]);
        let slot = AdHocEpisode::random_slot(config, seed);
        let mut ep = AdHocEpisode::new(config, team_task, slot, seed)?;
        let mut draw = rng::stream(seed, &[purpose::BEHAVIOR]);
        let eps = learn.epsilon.at(e);
        let mut key = q_key(&ep.observation(), None);
        while !ep.is_done() && ep.t() < learn.max_steps {
            let a = sample_action(&table.policy(&key, eps), &mut draw)?;
            let tr = ep.step(a)?;
            let next = q_key(&tr.obs, Some(a));
            table.update(key, a, -1.0, (!tr.done).then_some(next), learn.learn_rate, learn.gamma);
            key = next;
        }
    }
    debug!("learned {} table entries for {team_task}", table.entries.len());
    Ok(table)
}
