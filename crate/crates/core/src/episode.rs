//! One episode with a scripted team and a single externally controlled slot.

use rand_chacha::ChaCha8Rng;

use crate::env::{observe, reset, step, Action, EnvError, EnvState, GridConfig, Observation, EPISODE_CAP};
use crate::rng::{self, purpose, Chooser};
use crate::teammates::{team_act, teammate_action, TeamTaskId, View};

/// Result of advancing the episode by one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
}

/// Environment plus the three scripted teammates of one team-task; the
/// remaining slot is driven by the caller.
///
/// All randomness flows from `seed`: the initial state, the replaced slot
/// (when drawn) and the teammates' tie-breaks each use their own stream.
pub struct AdHocEpisode {
    config: GridConfig,
    team_task: TeamTaskId,
    slot: usize,
    state: EnvState,
    team_rng: ChaCha8Rng,
    own_rng: ChaCha8Rng,
}

impl AdHocEpisode {
    pub fn new(config: &GridConfig, team_task: TeamTaskId, slot: usize, seed: u64) -> Result<Self, EnvError> {
        if slot >= config.n_agents {
            return Err(EnvError::InvalidConfig(format!("slot {slot} out of range")));
        }
        let state = reset(config, rng::derive(seed, &[purpose::RESET]))?;
        Ok(AdHocEpisode {
            config: config.clone(),
            team_task,
            slot,
            state,
            team_rng: rng::stream(seed, &[purpose::EPISODE]),
            own_rng: rng::stream(seed, &[purpose::EPISODE, 1]),
        })
    }

    /// Draws the replaced slot uniformly from the seed.
    pub fn random_slot(config: &GridConfig, seed: u64) -> usize {
        rng::stream(seed, &[purpose::SLOT]).choose(config.n_agents)
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn team_task(&self) -> TeamTaskId {
        self.team_task
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn t(&self) -> u32 {
        self.state.t
    }

    pub fn is_done(&self) -> bool {
        self.state.is_terminal()
    }

    pub fn is_capped(&self) -> bool {
        self.state.t >= EPISODE_CAP
    }

    /// Current observation of the controlled slot.
    pub fn observation(&self) -> Observation {
        observe(&self.config, &self.state, self.slot)
    }

    /// What the team's own strategy would do in the controlled slot; used by
    /// the homogeneous-team baseline. Draws from a stream separate from the
    /// teammates' so that their behaviour is unaffected by the call.
    pub fn team_member_action(&mut self) -> Action {
        let view = View::from_state(&self.config, &self.state);
        teammate_action(&view, self.slot, self.team_task.strategy, &self.team_task.task, &mut self.own_rng)
    }

    /// Applies `action` for the controlled slot together with the teammates'
    /// actions.
    pub fn step(&mut self, action: Action) -> Result<Transition, EnvError> {
        let mut joint = vec![Action::NoOp; self.config.n_agents];
        joint[self.slot] = action;
        let team = team_act(
            &self.config,
            &self.state,
            self.team_task.strategy,
            &self.team_task.task,
            self.slot,
            &mut self.team_rng,
        );
        for (i, a) in team {
            joint[i] = a;
        }
        let out = step(&self.config, &self.state, &joint)?;
        let reward = out.rewards[self.slot];
        self.state = out.state;
        Ok(Transition { obs: self.observation(), reward, done: out.done })
    }
}
