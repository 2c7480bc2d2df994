//! Level-Based Foraging and Predator-Prey rules layered on the kernel.

use crate::env::{Action, Cell, DomainKind, EnvState, GridConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DomainRules {
    pub kind: DomainKind,
    pub capture_requirement: usize,
}

/// Loads every food whose adjacent interacting agents have enough combined
/// level. Participants receive +1 per food loaded.
pub fn apply_lbf_interact(state: &mut EnvState, interactors: &[usize]) -> Vec<f64> {
    let mut rewards = vec![0.0; state.agents.len()];
    if interactors.is_empty() {
        return rewards;
    }
    for t in 0..state.targets.len() {
        if !state.alive[t] {
            continue;
        }
        let food = state.targets[t];
        let loaders: Vec<usize> = interactors
            .iter()
            .copied()
            .filter(|&i| state.agents[i].manhattan(food) == 1)
            .collect();
        let power: u32 = loaders.iter().map(|&i| state.agent_levels[i] as u32).sum();
        if !loaders.is_empty() && power >= state.target_levels[t] as u32 {
            state.alive[t] = false;
            for i in loaders {
                rewards[i] += 1.0;
            }
        }
    }
    rewards
}

/// Removes prey surrounded by enough predators, rewards those predators,
/// then lets the surviving prey evade. Returns (rewards, done).
pub fn apply_pp_capture(config: &GridConfig, state: &mut EnvState) -> (Vec<f64>, bool) {
    let mut rewards = vec![0.0; state.agents.len()];
    for t in 0..state.targets.len() {
        if !state.alive[t] {
            continue;
        }
        let prey = state.targets[t];
        let hunters: Vec<usize> =
            (0..state.agents.len()).filter(|&i| state.agents[i].manhattan(prey) == 1).collect();
        if hunters.len() >= config.capture_requirement {
            state.alive[t] = false;
            for i in hunters {
                rewards[i] += 1.0;
            }
        }
    }
    for t in 0..state.targets.len() {
        if state.alive[t] {
            state.targets[t] = evasion_move(config, state, t);
        }
    }
    (rewards, state.is_terminal())
}

/// Cell prey `t` moves to: among staying and the four moves (in that order),
/// the first that maximises the minimum Chebyshev distance to any predator.
pub fn evasion_move(config: &GridConfig, state: &EnvState, t: usize) -> Cell {
    let here = state.targets[t];
    let score = |c: Cell| state.agents.iter().map(|a| a.chebyshev(c)).min().unwrap_or(i32::MAX);
    let mut best = here;
    let mut best_score = score(here);
    for a in Action::MOVES {
        let c = here.offset(a.delta());
        let blocked = !config.in_bounds(c)
            || state.agent_at(c).is_some()
            || state.live_targets().any(|(j, p)| j != t && p == c);
        if blocked {
            continue;
        }
        let s = score(c);
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    best
}
