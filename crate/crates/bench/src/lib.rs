//! Shared fixtures for the benchmarks.

use recbayes_core::classifier::ClassifierParams;
use recbayes_core::trajectories::{collect, Behavior, Trajectory};
use recbayes_core::{DomainKind, ExperimentSet, GridConfig, TeamTaskId};

pub fn grid(kind: DomainKind) -> GridConfig {
    GridConfig::standard(kind, 7)
}

pub fn team_tasks() -> Vec<TeamTaskId> {
    ExperimentSet::TeamId.team_tasks()
}

/// `n` best-response trajectories of the first team-task, capped at `l`.
pub fn trajectories(kind: DomainKind, n: usize, l: usize) -> Vec<Trajectory> {
    collect(&grid(kind), team_tasks()[0], Behavior::BestResponse, n, l, 1)
        .expect("collection")
        .trajectories
}

pub fn classifier() -> ClassifierParams {
    ClassifierParams::init(team_tasks().len(), 3)
}
