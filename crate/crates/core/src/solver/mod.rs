//! Optimal block-design policies by backward induction.

mod dp;
mod levels;
mod oracle;
mod policy;
mod table;

pub use dp::{solve, solve_with, stored_state_count, Progress, SolveOptions, DEFAULT_STATE_BUDGET, TIE_TOLERANCE};
pub use levels::{enumerate_levels, feasible_actions, infeasibility_reason, LevelSchedule, PackedAction};
pub use oracle::{brute_force_value, brute_force_value_at, ORACLE_STATE_CAP};
pub use policy::{Policy, PolicyEntry};
