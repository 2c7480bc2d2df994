//! Online identification of teammates and tasks for ad hoc teamwork in
//! partially observable grid worlds.

pub mod bayes_oracle;
pub mod binio;
pub mod classifier;
pub mod domains;
pub mod env;
pub mod episode;
pub mod harness;
pub mod policies;
pub mod rng;
pub mod teammates;
pub mod trajectories;

pub use env::{Action, Cell, DomainKind, EnvError, EnvState, GridConfig, Observation, StepOutcome};
pub use teammates::{ExperimentSet, TaskSpec, TeamStrategy, TeamTaskId};

#[cfg(test)]
mod invariants;
