//! Scripted team strategies and the cardinal-direction task variants that
//! together define the known team-tasks.
//!
//! Strategies are written against a [`View`] rather than the raw
//! [`EnvState`] so the same code drives both full-state teammates and the
//! observation-driven best responses in [`crate::policies`], whose view is
//! rebuilt from memory and may be missing entities or level information.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use crate::env::{Action, Cell, DomainKind, EnvState, GridConfig};
use crate::rng::Chooser;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TeamStrategy {
    Greedy,
    TeammateAware,
    ProbabilisticDestinations,
}

impl TeamStrategy {
    pub const ALL: [TeamStrategy; 3] =
        [TeamStrategy::Greedy, TeamStrategy::TeammateAware, TeamStrategy::ProbabilisticDestinations];

    pub fn token(self) -> &'static str {
        match self {
            TeamStrategy::Greedy => "greedy",
            TeamStrategy::TeammateAware => "teammate_aware",
            TeamStrategy::ProbabilisticDestinations => "prob_dest",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        TeamStrategy::ALL.into_iter().find(|t| t.token() == s.trim())
    }
}

impl fmt::Display for TeamStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    N,
    S,
    E,
    W,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::N, Direction::S, Direction::E, Direction::W];

    pub fn delta(self) -> (i32, i32) {
        self.action().delta()
    }

    pub fn action(self) -> Action {
        match self {
            Direction::N => Action::North,
            Direction::S => Action::South,
            Direction::E => Action::East,
            Direction::W => Action::West,
        }
    }

    fn letter(self) -> char {
        match self {
            Direction::N => 'n',
            Direction::S => 's',
            Direction::E => 'e',
            Direction::W => 'w',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        Direction::ALL.into_iter().find(|d| d.letter() == c)
    }
}

/// Which side of a target each agent must approach from.
///
/// `Assigned(dirs)` gives agent `i` the direction `dirs[i]`; the four entries
/// form a bijection onto N/S/E/W. Teams with fewer than four agents use a
/// prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskSpec {
    Free,
    Assigned([Direction; 4]),
}

impl TaskSpec {
    pub fn direction(&self, agent: usize) -> Option<Direction> {
        match self {
            TaskSpec::Free => None,
            TaskSpec::Assigned(d) => d.get(agent).copied(),
        }
    }

    /// `free`, or a permutation of `nsew` such as `wnse`.
    pub fn from_token(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "free" {
            return Some(TaskSpec::Free);
        }
        let dirs: Vec<Direction> = s.chars().map(Direction::from_letter).collect::<Option<_>>()?;
        if dirs.len() != 4 {
            return None;
        }
        let distinct: HashSet<Direction> = dirs.iter().copied().collect();
        if distinct.len() != 4 {
            return None;
        }
        Some(TaskSpec::Assigned([dirs[0], dirs[1], dirs[2], dirs[3]]))
    }

    pub fn token(&self) -> String {
        match self {
            TaskSpec::Free => "free".to_string(),
            TaskSpec::Assigned(d) => d.iter().map(|d| d.letter()).collect(),
        }
    }

    /// The four rotations of the base assignment `nsew`: agent `i` takes
    /// `base[(i + r) % 4]`, so every agent changes side between rotations.
    pub fn rotation(r: usize) -> TaskSpec {
        let base = Direction::ALL;
        TaskSpec::Assigned(std::array::from_fn(|i| base[(i + r) % 4]))
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}

/// One known team-task; `k` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TeamTaskId {
    pub k: usize,
    pub strategy: TeamStrategy,
    pub task: TaskSpec,
}

impl TeamTaskId {
    pub fn index(&self) -> usize {
        self.k - 1
    }
}

impl fmt::Display for TeamTaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}:{}:{}", self.k, self.strategy, self.task)
    }
}

/// The three identification experiment sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentSet {
    /// Fixed strategy (teammate-aware), five tasks.
    TaskId,
    /// Fixed task (free), three strategies.
    TeamId,
    /// Cross product: fifteen team-tasks.
    TaskAndTeamId,
}

impl ExperimentSet {
    pub fn token(self) -> &'static str {
        match self {
            ExperimentSet::TaskId => "task_id",
            ExperimentSet::TeamId => "team_id",
            ExperimentSet::TaskAndTeamId => "task_team_id",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s.trim() {
            "task_id" | "task" => Some(ExperimentSet::TaskId),
            "team_id" | "team" => Some(ExperimentSet::TeamId),
            "task_team_id" | "task_team" | "both" => Some(ExperimentSet::TaskAndTeamId),
            _ => None,
        }
    }

    pub fn tasks() -> [TaskSpec; 5] {
        [TaskSpec::rotation(0), TaskSpec::rotation(1), TaskSpec::rotation(2), TaskSpec::rotation(3), TaskSpec::Free]
    }

    /// Team-task grid of the set, numbered from k = 1.
    pub fn team_tasks(self) -> Vec<TeamTaskId> {
        let pairs: Vec<(TeamStrategy, TaskSpec)> = match self {
            ExperimentSet::TeamId => TeamStrategy::ALL.iter().map(|&s| (s, TaskSpec::Free)).collect(),
            ExperimentSet::TaskId => {
                Self::tasks().iter().map(|&t| (TeamStrategy::TeammateAware, t)).collect()
            }
            ExperimentSet::TaskAndTeamId => TeamStrategy::ALL
                .iter()
                .flat_map(|&s| Self::tasks().into_iter().map(move |t| (s, t)))
                .collect(),
        };
        pairs
            .into_iter()
            .enumerate()
            .map(|(i, (strategy, task))| TeamTaskId { k: i + 1, strategy, task })
            .collect()
    }
}

impl fmt::Display for ExperimentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetView {
    pub pos: Cell,
    /// `None` when the level is not known to the viewer.
    pub level: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bounds {
    Grid { width: usize, height: usize },
    /// Inclusive row and column ranges, used when the grid is only partly
    /// known and unknown edges are replaced by a search horizon.
    Rect { rows: (i32, i32), cols: (i32, i32) },
}

/// What a strategy gets to see when choosing an action.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub kind: DomainKind,
    /// Indexed by agent; `None` for agents whose position is unknown.
    pub agents: Vec<Option<Cell>>,
    /// Live targets only.
    pub targets: Vec<TargetView>,
    pub bounds: Bounds,
}

impl View {
    pub fn from_state(config: &GridConfig, state: &EnvState) -> View {
        View {
            kind: config.kind,
            agents: state.agents.iter().map(|&c| Some(c)).collect(),
            targets: state
                .live_targets()
                .map(|(i, pos)| TargetView { pos, level: Some(state.target_levels[i]) })
                .collect(),
            bounds: Bounds::Grid { width: config.width, height: config.height },
        }
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        match &self.bounds {
            Bounds::Grid { width, height } => {
                c.row >= 0 && c.col >= 0 && (c.row as usize) < *height && (c.col as usize) < *width
            }
            Bounds::Rect { rows, cols } => {
                c.row >= rows.0 && c.row <= rows.1 && c.col >= cols.0 && c.col <= cols.1
            }
        }
    }

    pub fn has_target(&self, c: Cell) -> bool {
        self.targets.iter().any(|t| t.pos == c)
    }

    pub fn agent_at(&self, c: Cell) -> Option<usize> {
        self.agents.iter().position(|a| *a == Some(c))
    }

    fn open(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.has_target(c)
    }
}

/// Outcome of a path query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathStep {
    Arrived,
    /// Every first move that starts a shortest path, in N, S, E, W order.
    Moves(Vec<Action>),
    NoPath,
}

/// Shortest paths from `from` to the nearest of `goals`, avoiding cells for
/// which `blocked` holds.
pub fn path_moves(view: &View, from: Cell, goals: &[Cell], blocked: impl Fn(Cell) -> bool) -> PathStep {
    if goals.contains(&from) {
        return PathStep::Arrived;
    }
    let passable = |c: Cell| c == from || (view.in_bounds(c) && !blocked(c));
    let mut dist: HashMap<Cell, u32> = HashMap::new();
    let mut queue = VecDeque::new();
    for &g in goals {
        if passable(g) && !dist.contains_key(&g) {
            dist.insert(g, 0);
            queue.push_back(g);
        }
    }
    while let Some(c) = queue.pop_front() {
        if c == from {
            break;
        }
        let d = dist[&c];
        for n in c.neighbours() {
            if passable(n) && !dist.contains_key(&n) {
                dist.insert(n, d + 1);
                queue.push_back(n);
            }
        }
    }
    let Some(&here) = dist.get(&from) else {
        return PathStep::NoPath;
    };
    let moves: Vec<Action> = Action::MOVES
        .into_iter()
        .filter(|a| {
            let n = from.offset(a.delta());
            n != from && dist.get(&n) == Some(&(here - 1))
        })
        .collect();
    if moves.is_empty() {
        PathStep::NoPath
    } else {
        PathStep::Moves(moves)
    }
}

/// Resolves a path query to an action; ties between shortest first moves are
/// broken by `tie`, which is consulted only when there is a real choice.
fn follow(step: PathStep, on_arrival: Action, tie: &mut dyn Chooser) -> Action {
    match step {
        PathStep::Arrived => on_arrival,
        PathStep::Moves(m) if m.len() == 1 => m[0],
        PathStep::Moves(m) => m[tie.choose(m.len())],
        PathStep::NoPath => Action::NoOp,
    }
}

/// Cells from which `agent` may work on the target at `target`.
fn approach_cells(view: &View, target: Cell, agent: usize, task: &TaskSpec) -> Vec<Cell> {
    let open: Vec<Cell> = target.neighbours().into_iter().filter(|&c| view.open(c)).collect();
    match task.direction(agent) {
        Some(d) => {
            let c = target.offset(d.delta());
            if view.open(c) {
                vec![c]
            } else {
                open
            }
        }
        None => open,
    }
}

fn arrival_action(kind: DomainKind) -> Action {
    match kind {
        DomainKind::Lbf => Action::Interact,
        DomainKind::Pp => Action::NoOp,
    }
}

/// Index into `view.targets` of the highest-value target.
///
/// In LBF with known levels this is the highest level, ties to the lowest
/// index. For prey it is the target closest to the known agents in total
/// Manhattan distance. A viewer that cannot see food levels prefers food with
/// the most other agents next to it, then the total-distance rule. Distance ties go
/// to the lowest (row, col).
pub fn value_target(view: &View, viewer: usize) -> Option<usize> {
    if view.targets.is_empty() {
        return None;
    }
    let levels_known = view.targets.iter().all(|t| t.level.is_some());
    if view.kind == DomainKind::Lbf && !levels_known {
        // hidden levels: follow the food that other agents already surround
        let holders = |t: &TargetView| {
            let others = view.agents.iter().enumerate().filter(|&(j, _)| j != viewer);
            others.filter_map(|(_, a)| *a).filter(|a| a.manhattan(t.pos) == 1).count()
        };
        let cost = |t: &TargetView| {
            let d: i32 = view.agents.iter().flatten().map(|a| a.manhattan(t.pos)).sum();
            (std::cmp::Reverse(holders(t)), d, t.pos.row, t.pos.col)
        };
        return (0..view.targets.len()).min_by_key(|&i| cost(&view.targets[i]));
    }
    if view.kind == DomainKind::Lbf {
        let mut best = 0;
        for (i, t) in view.targets.iter().enumerate() {
            if t.level > view.targets[best].level {
                best = i;
            }
        }
        return Some(best);
    }
    // distance ties break on position so that views listing targets in a
    // different order agree
    let cost = |t: &TargetView| {
        let d: i32 = view.agents.iter().flatten().map(|a| a.manhattan(t.pos)).sum();
        (d, t.pos.row, t.pos.col)
    };
    (0..view.targets.len()).min_by_key(|&i| cost(&view.targets[i]))
}

/// Closest target, moving around food/prey but ignoring every agent.
pub fn greedy_action(view: &View, agent: usize, task: &TaskSpec, tie: &mut dyn Chooser) -> Action {
    let Some(me) = view.agents[agent] else {
        return Action::NoOp;
    };
    let Some(target) = view
        .targets
        .iter()
        .enumerate()
        .min_by_key(|(_, t)| (t.pos.manhattan(me), t.pos.row, t.pos.col))
        .map(|(_, t)| t.pos)
    else {
        return Action::NoOp;
    };
    let goals = approach_cells(view, target, agent, task);
    follow(path_moves(view, me, &goals, |c| view.has_target(c)), arrival_action(view.kind), tie)
}

/// Highest-value target, shortest path treating teammates as obstacles.
pub fn teammate_aware_action(view: &View, agent: usize, task: &TaskSpec, tie: &mut dyn Chooser) -> Action {
    let Some(me) = view.agents[agent] else {
        return Action::NoOp;
    };
    let Some(t) = value_target(view, agent) else {
        return Action::NoOp;
    };
    let occupied = |c: Cell| view.agents.iter().enumerate().any(|(j, a)| j != agent && *a == Some(c));
    let goals: Vec<Cell> = approach_cells(view, view.targets[t].pos, agent, task)
        .into_iter()
        .filter(|&c| !occupied(c))
        .collect();
    if goals.is_empty() {
        return Action::NoOp;
    }
    let plan = path_moves(view, me, &goals, |c| view.has_target(c) || occupied(c));
    follow(plan, arrival_action(view.kind), tie)
}

/// Distinct cells around `target` for every known agent.
///
/// Assigned directions are honoured when that side is open. Without an
/// assignment, an agent already standing on an open side keeps it. Remaining
/// agents take the nearest unclaimed open side in agent index order.
pub fn encircle_assignment(view: &View, target: Cell, task: &TaskSpec) -> Vec<Option<Cell>> {
    let open: Vec<Cell> = target.neighbours().into_iter().filter(|&c| view.open(c)).collect();
    let mut cells: Vec<Option<Cell>> = vec![None; view.agents.len()];
    let mut claimed: HashSet<Cell> = HashSet::new();
    for (i, a) in view.agents.iter().enumerate() {
        let Some(pos) = a else { continue };
        match task.direction(i) {
            Some(d) => {
                let c = target.offset(d.delta());
                if view.open(c) && claimed.insert(c) {
                    cells[i] = Some(c);
                }
            }
            None => {
                if open.contains(pos) && claimed.insert(*pos) {
                    cells[i] = Some(*pos);
                }
            }
        }
    }
    for (i, a) in view.agents.iter().enumerate() {
        let Some(pos) = a else { continue };
        if cells[i].is_some() {
            continue;
        }
        let pick = open
            .iter()
            .copied()
            .filter(|c| !claimed.contains(c))
            .enumerate()
            .min_by_key(|(order, c)| (c.manhattan(*pos), *order))
            .map(|(_, c)| c);
        if let Some(c) = pick {
            claimed.insert(c);
            cells[i] = Some(c);
        }
    }
    cells
}

/// Highest-value target, encircled: each agent heads for its own side and
/// holds there; food is only loaded once every assigned side is manned.
pub fn probabilistic_destinations_action(
    view: &View,
    agent: usize,
    task: &TaskSpec,
    tie: &mut dyn Chooser,
) -> Action {
    let Some(me) = view.agents[agent] else {
        return Action::NoOp;
    };
    let Some(t) = value_target(view, agent) else {
        return Action::NoOp;
    };
    let plan = encircle_assignment(view, view.targets[t].pos, task);
    let Some(goal) = plan[agent] else {
        return Action::NoOp;
    };
    if me == goal {
        let all_manned = plan
            .iter()
            .enumerate()
            .all(|(j, c)| c.is_none() || view.agents[j] == *c);
        return if view.kind == DomainKind::Lbf && all_manned { Action::Interact } else { Action::NoOp };
    }
    let occupied = |c: Cell| view.agents.iter().enumerate().any(|(j, a)| j != agent && *a == Some(c));
    follow(path_moves(view, me, &[goal], |c| view.has_target(c) || occupied(c)), Action::NoOp, tie)
}

pub fn strategy_action(
    view: &View,
    agent: usize,
    strategy: TeamStrategy,
    task: &TaskSpec,
    tie: &mut dyn Chooser,
) -> Action {
    match strategy {
        TeamStrategy::Greedy => greedy_action(view, agent, task, tie),
        TeamStrategy::TeammateAware => teammate_aware_action(view, agent, task, tie),
        TeamStrategy::ProbabilisticDestinations => probabilistic_destinations_action(view, agent, task, tie),
    }
}

/// Moves from `agent`'s cell into cells that are in bounds and hold no known
/// agent or target.
pub fn free_moves(view: &View, agent: usize) -> Vec<Action> {
    let Some(me) = view.agents[agent] else {
        return Vec::new();
    };
    Action::MOVES
        .into_iter()
        .filter(|a| {
            let c = me.offset(a.delta());
            view.open(c) && view.agent_at(c).is_none()
        })
        .collect()
}

/// True when `action` moves `agent` into a cell held by another agent.
pub fn is_bump(view: &View, agent: usize, action: Action) -> bool {
    match view.agents[agent] {
        Some(me) if action.is_move() => {
            let c = me.offset(action.delta());
            view.agent_at(c).is_some_and(|j| j != agent)
        }
        _ => false,
    }
}

/// Probability with which a blocked move is swapped for a random free move.
pub const UNSTICK_PROB: f64 = 0.5;

/// Breaks standoffs between agents: a move into another agent's cell is kept
/// with probability 1/2 and otherwise replaced by a uniformly random free
/// move (NoOp when boxed in).
pub fn unstick(view: &View, agent: usize, action: Action, rng: &mut dyn Chooser) -> Action {
    if !is_bump(view, agent, action) || rng.choose(2) == 0 {
        return action;
    }
    let free = free_moves(view, agent);
    match free.len() {
        0 => Action::NoOp,
        1 => free[0],
        n => free[rng.choose(n)],
    }
}

/// Action distribution induced by [`unstick`] for a fixed intended action.
pub fn unstick_distribution(view: &View, agent: usize, action: Action) -> [f64; Action::COUNT] {
    let mut d = [0.0; Action::COUNT];
    if !is_bump(view, agent, action) {
        d[action.index()] = 1.0;
        return d;
    }
    d[action.index()] += 1.0 - UNSTICK_PROB;
    let free = free_moves(view, agent);
    if free.is_empty() {
        d[Action::NoOp.index()] += UNSTICK_PROB;
    }
    for a in &free {
        d[a.index()] += UNSTICK_PROB / free.len() as f64;
    }
    d
}

/// A teammate ignores its strategy and takes a random move with probability
/// `1 / DRIFT_ODDS`, which dissolves symmetric oscillations between planners.
pub const DRIFT_ODDS: usize = 20;

/// One teammate's executed action: the strategy's choice passed through
/// [`unstick`], with occasional drift.
pub fn teammate_action(
    view: &View,
    agent: usize,
    strategy: TeamStrategy,
    task: &TaskSpec,
    rng: &mut dyn Chooser,
) -> Action {
    if rng.choose(DRIFT_ODDS) == 0 {
        return Action::MOVES[rng.choose(Action::MOVES.len())];
    }
    let a = strategy_action(view, agent, strategy, task, rng);
    unstick(view, agent, a, rng)
}

/// Actions of every agent except `adhoc`, as `(agent index, action)` pairs.
/// Agents are evaluated in index order, each drawing its own tie-breaks from
/// `rng`.
pub fn team_act(
    config: &GridConfig,
    state: &EnvState,
    strategy: TeamStrategy,
    task: &TaskSpec,
    adhoc: usize,
    rng: &mut dyn Chooser,
) -> Vec<(usize, Action)> {
    if state.is_terminal() {
        return (0..state.agents.len()).filter(|&i| i != adhoc).map(|i| (i, Action::NoOp)).collect();
    }
    let view = View::from_state(config, state);
    (0..state.agents.len())
        .filter(|&i| i != adhoc)
        .map(|i| (i, teammate_action(&view, i, strategy, task, rng)))
        .collect()
}

/// Actions of the whole team with no ad hoc member.
pub fn full_team_act(
    config: &GridConfig,
    state: &EnvState,
    strategy: TeamStrategy,
    task: &TaskSpec,
    rng: &mut dyn Chooser,
) -> Vec<Action> {
    if state.is_terminal() {
        return vec![Action::NoOp; state.agents.len()];
    }
    let view = View::from_state(config, state);
    (0..state.agents.len()).map(|i| teammate_action(&view, i, strategy, task, rng)).collect()
}

/// Tie-breaker that always takes the first option.
pub struct FirstChoice;

impl Chooser for FirstChoice {
    fn choose(&mut self, _n: usize) -> usize {
        0
    }
}
