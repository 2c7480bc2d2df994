//! Gridworld kernel shared by both domains: geometry, occupancy, joint-action
//! stepping and the egocentric 5x5x5 observation encoder.

use std::fmt;

use thiserror::Error;

use crate::domains;
use crate::rng::{self, Chooser};

/// Side of the square field-of-view window.
pub const FOV: usize = 5;
/// Number of observation channels: three teammate channels, targets, walls.
pub const CHANNELS: usize = 5;
/// Number of bits in one observation.
pub const OBS_BITS: usize = CHANNELS * FOV * FOV;
/// Target channel index.
pub const TARGET_CHANNEL: usize = 3;
/// Walls / out-of-bounds channel index.
pub const WALL_CHANNEL: usize = 4;
/// Hard cap on episode length used by collection and trials.
pub const EPISODE_CAP: u32 = 512;
/// Largest team size the channel map can encode.
pub const MAX_AGENTS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid grid config: {0}")]
    InvalidConfig(String),
    #[error("cannot place {entities} entities on a {width}x{height} grid")]
    PlacementInfeasible { entities: usize, width: usize, height: usize },
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("malformed observation record: padding bits set")]
    MalformedRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainKind {
    /// Level-Based Foraging.
    Lbf,
    /// Predator-Prey.
    Pp,
}

impl DomainKind {
    pub fn token(self) -> &'static str {
        match self {
            DomainKind::Lbf => "lbf",
            DomainKind::Pp => "pp",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lbf" => Some(DomainKind::Lbf),
            "pp" => Some(DomainKind::Pp),
            _ => None,
        }
    }
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Grid cell, row-major with row 0 at the north edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Cell {
    pub row: i32,
    pub col: i32,
}

impl Cell {
    pub const fn new(row: i32, col: i32) -> Self {
        Cell { row, col }
    }

    pub fn offset(self, (dr, dc): (i32, i32)) -> Cell {
        Cell::new(self.row + dr, self.col + dc)
    }

    pub fn manhattan(self, other: Cell) -> i32 {
        (self.row - other.row).abs() + (self.col - other.col).abs()
    }

    pub fn chebyshev(self, other: Cell) -> i32 {
        (self.row - other.row).abs().max((self.col - other.col).abs())
    }

    /// The four orthogonal neighbours in N, S, E, W order.
    pub fn neighbours(self) -> [Cell; 4] {
        [
            self.offset(Action::North.delta()),
            self.offset(Action::South.delta()),
            self.offset(Action::East.delta()),
            self.offset(Action::West.delta()),
        ]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// The six actions shared by every agent. `Interact` loads food in LBF and
/// behaves as `NoOp` in Predator-Prey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Action {
    NoOp = 0,
    North = 1,
    South = 2,
    East = 3,
    West = 4,
    Interact = 5,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const ALL: [Action; 6] =
        [Action::NoOp, Action::North, Action::South, Action::East, Action::West, Action::Interact];
    pub const MOVES: [Action; 4] = [Action::North, Action::South, Action::East, Action::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn to_byte(self) -> u8 {
        self as u8
    }

    pub fn from_byte(b: u8) -> Option<Action> {
        Action::ALL.get(b as usize).copied()
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::North => (-1, 0),
            Action::South => (1, 0),
            Action::East => (0, 1),
            Action::West => (0, -1),
            Action::NoOp | Action::Interact => (0, 0),
        }
    }

    pub fn is_move(self) -> bool {
        matches!(self, Action::North | Action::South | Action::East | Action::West)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub n_targets: usize,
    pub kind: DomainKind,
    /// Adjacent predators needed for a capture (Predator-Prey only).
    pub capture_requirement: usize,
    pub seed: u64,
}

impl GridConfig {
    /// Default configuration of a square domain used by the experiment sets.
    pub fn standard(kind: DomainKind, size: usize) -> Self {
        let n_targets = match (kind, size) {
            (_, s) if s <= 5 => 1,
            (_, s) if s <= 7 => 2,
            (_, _) => 3,
        };
        GridConfig {
            width: size,
            height: size,
            n_agents: 4,
            n_targets,
            kind,
            capture_requirement: 2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        // Enumeration-scale grids are smaller than the window; the walls
        // channel covers the out-of-bounds part of the view.
        if self.width < 3 || self.height < 3 {
            return Err(EnvError::InvalidConfig(format!(
                "grid {}x{} is smaller than 3x3",
                self.width, self.height
            )));
        }
        if self.width > 64 || self.height > 64 {
            return Err(EnvError::InvalidConfig("grid larger than 64x64".into()));
        }
        if !(2..=MAX_AGENTS).contains(&self.n_agents) {
            return Err(EnvError::InvalidConfig(format!(
                "n_agents must be in 2..={MAX_AGENTS}, got {}",
                self.n_agents
            )));
        }
        if self.n_targets == 0 {
            return Err(EnvError::InvalidConfig("n_targets must be at least 1".into()));
        }
        if !(1..=4).contains(&self.capture_requirement) {
            return Err(EnvError::InvalidConfig(format!(
                "capture_requirement must be in 1..=4, got {}",
                self.capture_requirement
            )));
        }
        Ok(())
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.row >= 0 && c.col >= 0 && (c.row as usize) < self.height && (c.col as usize) < self.width
    }

    pub fn rules(&self) -> domains::DomainRules {
        domains::DomainRules { kind: self.kind, capture_requirement: self.capture_requirement }
    }
}

/// Full joint state of one episode.
///
/// Targets are never deleted from the vectors; `alive` marks which are still
/// on the field so target indices stay stable within an episode.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub agents: Vec<Cell>,
    pub agent_levels: Vec<u8>,
    pub targets: Vec<Cell>,
    pub target_levels: Vec<u8>,
    pub alive: Vec<bool>,
    pub t: u32,
}

impl EnvState {
    pub fn live_targets(&self) -> impl Iterator<Item = (usize, Cell)> + '_ {
        self.targets.iter().enumerate().filter(|(i, _)| self.alive[*i]).map(|(i, c)| (i, *c))
    }

    pub fn n_live(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    pub fn is_terminal(&self) -> bool {
        self.n_live() == 0
    }

    pub fn agent_at(&self, c: Cell) -> Option<usize> {
        self.agents.iter().position(|&a| a == c)
    }

    pub fn target_at(&self, c: Cell) -> Option<usize> {
        self.live_targets().find(|(_, t)| *t == c).map(|(i, _)| i)
    }

    pub fn is_free(&self, config: &GridConfig, c: Cell) -> bool {
        config.in_bounds(c) && self.agent_at(c).is_none() && self.target_at(c).is_none()
    }

    /// Copy with the step counter cleared, used as a time-free state key.
    pub fn without_clock(&self) -> EnvState {
        EnvState { t: 0, ..self.clone() }
    }
}

/// Result of one kernel step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// Places agents and targets for a new episode using the seeded stream.
pub fn reset(config: &GridConfig, seed: u64) -> Result<EnvState, EnvError> {
    let mut rng = rng::stream(seed, &[rng::purpose::RESET]);
    reset_with(config, &mut rng)
}

/// Reset driven by an arbitrary [`Chooser`]; [`rng::enumerate_outcomes`]
/// uses this to recover the exact initial-state distribution.
pub fn reset_with(config: &GridConfig, chooser: &mut dyn Chooser) -> Result<EnvState, EnvError> {
    config.validate()?;
    let infeasible = || EnvError::PlacementInfeasible {
        entities: config.n_agents + config.n_targets,
        width: config.width,
        height: config.height,
    };
    if config.n_agents + config.n_targets > config.width * config.height {
        return Err(infeasible());
    }

    let all_cells: Vec<Cell> = (0..config.height as i32)
        .flat_map(|r| (0..config.width as i32).map(move |c| Cell::new(r, c)))
        .collect();

    let mut targets: Vec<Cell> = Vec::with_capacity(config.n_targets);
    for _ in 0..config.n_targets {
        let candidates: Vec<Cell> = all_cells
            .iter()
            .copied()
            .filter(|&c| match config.kind {
                // food sits off the border and apart from other food so that
                // all four approach sides exist
                DomainKind::Lbf => {
                    c.row >= 1
                        && c.col >= 1
                        && (c.row as usize) < config.height - 1
                        && (c.col as usize) < config.width - 1
                        && targets.iter().all(|t| t.chebyshev(c) >= 2)
                }
                DomainKind::Pp => !targets.contains(&c),
            })
            .collect();
        if candidates.is_empty() {
            return Err(infeasible());
        }
        targets.push(candidates[chooser.choose(candidates.len())]);
    }

    let mut agents: Vec<Cell> = Vec::with_capacity(config.n_agents);
    for _ in 0..config.n_agents {
        let candidates: Vec<Cell> = all_cells
            .iter()
            .copied()
            .filter(|c| !targets.contains(c) && !agents.contains(c))
            .collect();
        if candidates.is_empty() {
            return Err(infeasible());
        }
        agents.push(candidates[chooser.choose(candidates.len())]);
    }

    let (agent_levels, target_levels) = match config.kind {
        DomainKind::Lbf => {
            let agent_levels: Vec<u8> =
                (0..config.n_agents).map(|_| chooser.choose(3) as u8 + 1).collect();
            // every food must be loadable by the whole team
            let budget = agent_levels.iter().map(|&l| l as usize).sum::<usize>().min(3);
            let target_levels: Vec<u8> =
                (0..config.n_targets).map(|_| chooser.choose(budget) as u8 + 1).collect();
            (agent_levels, target_levels)
        }
        DomainKind::Pp => (vec![1; config.n_agents], vec![1; config.n_targets]),
    };

    Ok(EnvState {
        alive: vec![true; targets.len()],
        agents,
        agent_levels,
        targets,
        target_levels,
        t: 0,
    })
}

/// Moves agents simultaneously, then applies the domain rules.
///
/// A move fails when its destination is out of bounds, holds a live target,
/// is claimed by a lower-indexed agent, or is held by an agent that does not
/// vacate it. Agents whose moves form a cycle (including swaps) all stay.
pub fn step(config: &GridConfig, state: &EnvState, joint: &[Action]) -> Result<StepOutcome, EnvError> {
    if joint.len() != config.n_agents || state.agents.len() != config.n_agents {
        return Err(EnvError::InvalidTransition(format!(
            "expected {} actions, got {}",
            config.n_agents,
            joint.len()
        )));
    }
    if state.is_terminal() {
        return Err(EnvError::InvalidTransition("step on terminal state".into()));
    }

    let mut next = state.clone();
    next.agents = resolve_moves(config, state, joint);

    let (rewards, done) = match config.kind {
        DomainKind::Lbf => {
            let interactors: Vec<usize> = (0..config.n_agents)
                .filter(|&i| joint[i] == Action::Interact)
                .collect();
            let rewards = domains::apply_lbf_interact(&mut next, &interactors);
            let done = next.is_terminal();
            (rewards, done)
        }
        DomainKind::Pp => domains::apply_pp_capture(config, &mut next),
    };
    next.t = state.t + 1;
    Ok(StepOutcome { state: next, rewards, done })
}

/// Returns the post-move agent positions under the conflict rules.
pub(crate) fn resolve_moves(config: &GridConfig, state: &EnvState, joint: &[Action]) -> Vec<Cell> {
    let n = state.agents.len();
    let dest: Vec<Cell> = (0..n).map(|i| state.agents[i].offset(joint[i].delta())).collect();
    let mut moving: Vec<bool> = (0..n)
        .map(|i| {
            joint[i].is_move() && config.in_bounds(dest[i]) && state.target_at(dest[i]).is_none()
        })
        .collect();

    // lowest index wins a contested cell
    for i in 0..n {
        if moving[i] && (0..i).any(|j| moving[j] && dest[j] == dest[i]) {
            moving[i] = false;
        }
    }

    loop {
        let mut changed = false;
        for i in 0..n {
            if !moving[i] {
                continue;
            }
            // a stationary occupant blocks the move
            if let Some(j) = state.agent_at(dest[i]) {
                if !moving[j] {
                    moving[i] = false;
                    changed = true;
                    continue;
                }
            }
            // follow the occupancy chain; returning to i means a cycle
            let mut cur = i;
            let mut hops = 0;
            while let Some(j) = state.agent_at(dest[cur]) {
                if !moving[j] {
                    break;
                }
                if j == i {
                    moving[i] = false;
                    changed = true;
                    break;
                }
                cur = j;
                hops += 1;
                if hops > n {
                    break;
                }
            }
        }
        if !changed {
            break;
        }
    }

    (0..n).map(|i| if moving[i] { dest[i] } else { state.agents[i] }).collect()
}

/// Egocentric 5x5x5 binary view. Bit `ch*25 + row*5 + col` is set when
/// channel `ch` is present at window cell (row, col); the observer sits at
/// window cell (2, 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Observation(pub u128);

impl Observation {
    const VALID_MASK: u128 = (1u128 << OBS_BITS) - 1;

    pub fn bit_index(channel: usize, row: usize, col: usize) -> usize {
        debug_assert!(channel < CHANNELS && row < FOV && col < FOV);
        channel * FOV * FOV + row * FOV + col
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> bool {
        self.0 >> Self::bit_index(channel, row, col) & 1 == 1
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize) {
        self.0 |= 1u128 << Self::bit_index(channel, row, col);
    }

    pub fn count_ones(&self) -> u32 {
        self.0.count_ones()
    }

    /// Iterates the indices of the set bits in ascending order.
    pub fn ones(&self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(i)
        })
    }

    /// Builds an observation from raw bits, rejecting padding bits.
    pub fn from_bits(bits: u128) -> Result<Self, EnvError> {
        if bits & !Self::VALID_MASK != 0 {
            return Err(EnvError::MalformedRecord);
        }
        Ok(Observation(bits))
    }

    /// 16-byte little-endian, least-significant-bit-first packing.
    pub fn pack(&self) -> [u8; 16] {
        self.0.to_le_bytes()
    }

    pub fn unpack(bytes: &[u8; 16]) -> Result<Self, EnvError> {
        Self::from_bits(u128::from_le_bytes(*bytes))
    }
}

/// Channel that teammate `other` occupies in observer `observer`'s view.
pub fn teammate_channel(observer: usize, other: usize) -> Option<usize> {
    match other.cmp(&observer) {
        std::cmp::Ordering::Less => Some(other),
        std::cmp::Ordering::Equal => None,
        std::cmp::Ordering::Greater => Some(other - 1),
    }
}

/// Inverse of [`teammate_channel`].
pub fn channel_teammate(observer: usize, channel: usize) -> usize {
    if channel < observer {
        channel
    } else {
        channel + 1
    }
}

/// Encodes the 5x5 window centred on `agent`.
pub fn observe(config: &GridConfig, state: &EnvState, agent: usize) -> Observation {
    let centre = state.agents[agent];
    let half = (FOV / 2) as i32;
    let mut obs = Observation::default();
    let window = |c: Cell| -> Option<(usize, usize)> {
        let r = c.row - centre.row + half;
        let k = c.col - centre.col + half;
        (0..FOV as i32).contains(&r).then_some(())?;
        (0..FOV as i32).contains(&k).then_some((r as usize, k as usize))
    };

    for (j, &pos) in state.agents.iter().enumerate() {
        if let (Some(ch), Some((r, c))) = (teammate_channel(agent, j), window(pos)) {
            obs.set(ch, r, c);
        }
    }
    for (_, pos) in state.live_targets() {
        if let Some((r, c)) = window(pos) {
            obs.set(TARGET_CHANNEL, r, c);
        }
    }
    for r in 0..FOV {
        for c in 0..FOV {
            let cell = Cell::new(centre.row + r as i32 - half, centre.col + c as i32 - half);
            if !config.in_bounds(cell) {
                obs.set(WALL_CHANNEL, r, c);
            }
        }
    }
    obs
}
