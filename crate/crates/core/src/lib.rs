//! Design and evaluation of blocked response-adaptive randomization trials
//! with two arms and binary outcomes.
//!
//! A trial is modelled as a finite-horizon Markov decision process whose
//! states are cumulative 2×2 contingency tables and whose actions choose
//! the next block's size and allocation. [`solver::solve`] computes the
//! policy maximizing expected utility, [`store`] persists it, and [`sim`]
//! evaluates it against fixed and response-adaptive baselines by
//! Monte-Carlo simulation.

pub mod config;
pub mod error;
pub mod sim;
pub mod solver;
pub mod state;
pub mod stats;
pub mod store;
pub mod transition;
pub mod utility;

pub use config::{default_allocation_set, Smoothing, SolverConfig};
pub use error::{Error, MissingReason, Result};
pub use solver::{brute_force_value, enumerate_levels, feasible_actions, solve, LevelSchedule, Policy, PolicyEntry};
pub use state::{BlockAction, ContingencyState, StratumTable, TrialHistory};
pub use stats::{cmh_statistic, cmh_test_one_sided, harmonic_weight, map_estimate, rar_probability};
pub use store::{Encoding, PolicyHeader};
pub use transition::transition_pmf;
pub use utility::{
    count_states, lambda_f_threshold, reward, single_block_utility, two_block_utility, utility, utility_components,
};
