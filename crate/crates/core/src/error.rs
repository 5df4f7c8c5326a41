use std::path::PathBuf;

use crate::state::ContingencyState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid stratum: {0}")]
    InvalidStratum(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("action (block_size={block_size}, allocation={allocation}) is infeasible at {state}: {rule}")]
    ActionInfeasible {
        state: ContingencyState,
        block_size: u32,
        allocation: f64,
        rule: String,
    },

    /// The CMH denominator is exactly zero (every pooled outcome identical).
    #[error("CMH statistic is undefined: pooled outcomes carry no variance")]
    DegenerateStatistic,

    #[error(
        "solver capacity exceeded for N={n_patients}, T_min={min_block}, kappa={block_increment}: \
         {states} states exceed the budget of {budget}"
    )]
    SolverCapacity {
        n_patients: u32,
        min_block: u32,
        block_increment: u32,
        states: u64,
        budget: u64,
    },

    #[error("brute-force oracle capacity exceeded: {states} states > cap {cap}")]
    OracleCapacity { states: u64, cap: u64 },

    #[error("state {state} has no policy entry: {reason}")]
    StateNotInPolicy {
        state: ContingencyState,
        reason: MissingReason,
    },

    #[error("threshold undefined: requires p_A > p_B (got p_A={p_a}, p_B={p_b})")]
    UndefinedThreshold { p_a: f64, p_b: f64 },

    #[error("no power to calibrate: requires p_A > p_B (got p_A={p_a}, p_B={p_b})")]
    NoPower { p_a: f64, p_b: f64 },

    #[error("design/policy mismatch: {0}")]
    DesignPolicyMismatch(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported policy file version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("corrupt policy file: {0}")]
    CorruptFile(String),
}

/// Why a state lookup failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingReason {
    /// The state's total is not an allowed level of the schedule.
    OffSchedule,
    /// The state is terminal; no further block is chosen.
    Terminal,
    /// The total is on the schedule but no action is feasible there, or the
    /// table itself is inconsistent with the policy's patient count.
    NotActionable,
}

impl std::fmt::Display for MissingReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MissingReason::OffSchedule => f.write_str("total is not an allowed level"),
            MissingReason::Terminal => f.write_str("state is terminal"),
            MissingReason::NotActionable => f.write_str("no feasible action at this level"),
        }
    }
}
