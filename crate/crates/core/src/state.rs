//! Contingency tables, block actions and trial histories.
//!
//! A trial's state is the cumulative 2×2 table of everything observed so
//! far: patients assigned to each arm and successes within each arm. A
//! history is the sequence of cumulative tables visited, one per completed
//! block, starting from the empty table.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative 2×2 table of assignments and successes per arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct ContingencyState {
    pub n_assigned_a: u32,
    pub n_success_a: u32,
    pub n_assigned_b: u32,
    pub n_success_b: u32,
}

impl ContingencyState {
    pub const EMPTY: ContingencyState = ContingencyState {
        n_assigned_a: 0,
        n_success_a: 0,
        n_assigned_b: 0,
        n_success_b: 0,
    };

    /// Builds a table, rejecting success counts larger than assignments.
    pub fn new(n_assigned_a: u32, n_success_a: u32, n_assigned_b: u32, n_success_b: u32) -> Result<Self> {
        let s = ContingencyState {
            n_assigned_a,
            n_success_a,
            n_assigned_b,
            n_success_b,
        };
        if !s.is_consistent() {
            return Err(Error::InvariantViolation(format!(
                "successes exceed assignments in {s}"
            )));
        }
        Ok(s)
    }

    pub fn is_consistent(&self) -> bool {
        self.n_success_a <= self.n_assigned_a && self.n_success_b <= self.n_assigned_b
    }

    /// Number of observations recorded in the table (`T`).
    pub fn total(&self) -> u32 {
        self.n_assigned_a + self.n_assigned_b
    }

    /// Total successes across arms (`M_1`).
    pub fn successes(&self) -> u32 {
        self.n_success_a + self.n_success_b
    }

    /// Total failures across arms (`M_0`).
    pub fn failures(&self) -> u32 {
        self.total() - self.successes()
    }

    pub fn n_failure_a(&self) -> u32 {
        self.n_assigned_a - self.n_success_a
    }

    pub fn n_failure_b(&self) -> u32 {
        self.n_assigned_b - self.n_success_b
    }

    /// True when every count is at least the corresponding count of `other`.
    pub fn dominates(&self, other: &ContingencyState) -> bool {
        self.n_assigned_a >= other.n_assigned_a
            && self.n_success_a >= other.n_success_a
            && self.n_assigned_b >= other.n_assigned_b
            && self.n_success_b >= other.n_success_b
            && self.n_failure_a() >= other.n_failure_a()
            && self.n_failure_b() >= other.n_failure_b()
    }

    /// The same table with the arms exchanged.
    pub fn swapped(&self) -> ContingencyState {
        ContingencyState {
            n_assigned_a: self.n_assigned_b,
            n_success_a: self.n_success_b,
            n_assigned_b: self.n_assigned_a,
            n_success_b: self.n_success_a,
        }
    }
}

impl fmt::Display for ContingencyState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(N_A={}, n_A={}, N_B={}, n_B={})",
            self.n_assigned_a, self.n_success_a, self.n_assigned_b, self.n_success_b
        )
    }
}

impl Add<StratumTable> for ContingencyState {
    type Output = ContingencyState;

    fn add(self, rhs: StratumTable) -> ContingencyState {
        ContingencyState {
            n_assigned_a: self.n_assigned_a + rhs.n_assigned_a,
            n_success_a: self.n_success_a + rhs.n_success_a,
            n_assigned_b: self.n_assigned_b + rhs.n_assigned_b,
            n_success_b: self.n_success_b + rhs.n_success_b,
        }
    }
}

impl Sub for ContingencyState {
    type Output = StratumTable;

    /// Per-block table between two cumulative states. Callers must ensure
    /// `self` dominates `rhs`.
    fn sub(self, rhs: ContingencyState) -> StratumTable {
        StratumTable {
            n_assigned_a: self.n_assigned_a - rhs.n_assigned_a,
            n_success_a: self.n_success_a - rhs.n_success_a,
            n_assigned_b: self.n_assigned_b - rhs.n_assigned_b,
            n_success_b: self.n_success_b - rhs.n_success_b,
        }
    }
}

/// A single block's (non-cumulative) table; the strata of the final CMH test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StratumTable {
    pub n_assigned_a: u32,
    pub n_success_a: u32,
    pub n_assigned_b: u32,
    pub n_success_b: u32,
}

impl StratumTable {
    pub fn new(n_assigned_a: u32, n_success_a: u32, n_assigned_b: u32, n_success_b: u32) -> Result<Self> {
        if n_success_a > n_assigned_a || n_success_b > n_assigned_b {
            return Err(Error::InvalidStratum(format!(
                "successes exceed assignments: A {n_success_a}/{n_assigned_a}, B {n_success_b}/{n_assigned_b}"
            )));
        }
        Ok(StratumTable {
            n_assigned_a,
            n_success_a,
            n_assigned_b,
            n_success_b,
        })
    }

    /// Builds a stratum from per-arm success and failure counts.
    pub fn from_outcomes(successes_a: u32, failures_a: u32, successes_b: u32, failures_b: u32) -> Self {
        StratumTable {
            n_assigned_a: successes_a + failures_a,
            n_success_a: successes_a,
            n_assigned_b: successes_b + failures_b,
            n_success_b: successes_b,
        }
    }

    pub fn total(&self) -> u32 {
        self.n_assigned_a + self.n_assigned_b
    }

    pub fn swapped(&self) -> StratumTable {
        StratumTable {
            n_assigned_a: self.n_assigned_b,
            n_success_a: self.n_success_b,
            n_assigned_b: self.n_assigned_a,
            n_success_b: self.n_success_a,
        }
    }
}

/// Size and allocation fraction of the next block.
///
/// Under an MDP design exactly `round(T·φ)` patients go to arm A; baseline
/// designs that randomize patient by patient record their assignment
/// probability in `allocation` instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockAction {
    pub block_size: u32,
    pub allocation: f64,
}

impl BlockAction {
    pub fn new(block_size: u32, allocation: f64) -> Self {
        BlockAction { block_size, allocation }
    }

    /// Patients sent to arm A: `T·φ` rounded half away from zero.
    pub fn assigned_a(&self) -> u32 {
        exact_assignment(self.block_size, self.allocation)
    }

    pub fn assigned_b(&self) -> u32 {
        self.block_size - self.assigned_a()
    }

    /// Both arms receive at least one patient.
    pub fn has_both_arms(&self) -> bool {
        let a = self.assigned_a();
        a >= 1 && self.block_size - a >= 1
    }
}

/// `round(T·φ)` with halves rounded away from zero.
///
/// Products like `0.7 × 5` land a hair off the exact half in binary, so the
/// product is nudged before rounding.
pub fn exact_assignment(block_size: u32, allocation: f64) -> u32 {
    let raw = f64::from(block_size) * allocation;
    let rounded = (raw + 1e-9).round();
    (rounded.max(0.0) as u32).min(block_size)
}

/// Sequence of cumulative states `(s_0, …, s_K)` and the block actions between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialHistory {
    pub states: Vec<ContingencyState>,
    pub actions: Vec<BlockAction>,
}

impl TrialHistory {
    pub fn new() -> Self {
        TrialHistory {
            states: vec![ContingencyState::EMPTY],
            actions: Vec::new(),
        }
    }

    /// Appends a block outcome.
    pub fn push(&mut self, action: BlockAction, stratum: StratumTable) {
        let next = self.current() + stratum;
        self.states.push(next);
        self.actions.push(action);
    }

    pub fn current(&self) -> ContingencyState {
        *self.states.last().expect("history always holds the empty table")
    }

    /// Number of blocks `K(h)`.
    pub fn num_blocks(&self) -> usize {
        self.actions.len()
    }

    /// Per-block strata, `states[k] − states[k−1]`.
    pub fn strata(&self) -> Vec<StratumTable> {
        self.states.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Checks the structural invariants against a trial of `n_patients`.
    pub fn validate(&self, n_patients: u32) -> Result<()> {
        let first = self
            .states
            .first()
            .ok_or_else(|| Error::InvariantViolation("history has no states".into()))?;
        if *first != ContingencyState::EMPTY {
            return Err(Error::InvariantViolation(format!(
                "history must start at the empty table, found {first}"
            )));
        }
        if self.actions.len() + 1 != self.states.len() {
            return Err(Error::InvariantViolation(format!(
                "{} actions for {} states",
                self.actions.len(),
                self.states.len()
            )));
        }
        for (k, s) in self.states.iter().enumerate() {
            if !s.is_consistent() {
                return Err(Error::InvariantViolation(format!("state {k} {s} is inconsistent")));
            }
        }
        for (k, w) in self.states.windows(2).enumerate() {
            if !w[1].dominates(&w[0]) || w[1].total() == w[0].total() {
                return Err(Error::InvariantViolation(format!(
                    "state {} {} does not strictly extend {}",
                    k + 1,
                    w[1],
                    w[0]
                )));
            }
        }
        let last = self.current();
        if last.total() != n_patients {
            return Err(Error::InvariantViolation(format!(
                "final state has {} observations, expected {n_patients}",
                last.total()
            )));
        }
        Ok(())
    }
}

impl Default for TrialHistory {
    fn default() -> Self {
        Self::new()
    }
}
