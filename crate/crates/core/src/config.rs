use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Beta prior pseudo-counts `(γ_A1, γ_A0, γ_B1, γ_B0)`: successes then
/// failures for arm A, then arm B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothing {
    pub success_a: f64,
    pub failure_a: f64,
    pub success_b: f64,
    pub failure_b: f64,
}

impl Smoothing {
    pub const fn uniform(gamma: f64) -> Self {
        Smoothing {
            success_a: gamma,
            failure_a: gamma,
            success_b: gamma,
            failure_b: gamma,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.success_a, self.failure_a, self.success_b, self.failure_b]
    }

    pub fn from_array(g: [f64; 4]) -> Self {
        Smoothing {
            success_a: g[0],
            failure_a: g[1],
            success_b: g[2],
            failure_b: g[3],
        }
    }
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::uniform(1.0)
    }
}

/// The allocation grid used unless a caller overrides it: 0.2, 0.3, …, 0.8.
pub fn default_allocation_set() -> Vec<f64> {
    vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
}

/// Complete definition of one design problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Patients available to the trial (`N`).
    pub n_patients: u32,
    /// Weight on the failure penalty (`λ_F`).
    pub failure_weight: f64,
    /// Cost per block (`λ_K`).
    pub block_cost: f64,
    /// Allowed allocation fractions (`Φ`), ascending.
    pub allocation_set: Vec<f64>,
    /// Minimum block size (`T_min`).
    pub min_block: u32,
    /// Cumulative totals must be multiples of this (`κ`).
    pub block_increment: u32,
    pub smoothing: Smoothing,
}

impl SolverConfig {
    /// Defaults: `T_min = ⌈N/8⌉`, `κ = 2`, `Φ = {0.2, …, 0.8}`, all `γ = 1`.
    pub fn new(n_patients: u32, failure_weight: f64, block_cost: f64) -> Self {
        SolverConfig {
            n_patients,
            failure_weight,
            block_cost,
            allocation_set: default_allocation_set(),
            min_block: n_patients.div_ceil(8).max(1),
            block_increment: 2,
            smoothing: Smoothing::default(),
        }
    }

    pub fn with_allocation_set(mut self, set: Vec<f64>) -> Self {
        self.allocation_set = set;
        self
    }

    pub fn with_min_block(mut self, min_block: u32) -> Self {
        self.min_block = min_block;
        self
    }

    pub fn with_block_increment(mut self, block_increment: u32) -> Self {
        self.block_increment = block_increment;
        self
    }

    pub fn with_smoothing(mut self, smoothing: Smoothing) -> Self {
        self.smoothing = smoothing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_patients == 0 {
            return bad("n_patients must be at least 1".into());
        }
        if self.min_block < 1 || self.min_block > self.n_patients {
            return bad(format!(
                "min_block must lie in [1, {}], got {}",
                self.n_patients, self.min_block
            ));
        }
        if self.block_increment < 1 {
            return bad("block_increment must be at least 1".into());
        }
        if !(self.failure_weight.is_finite() && self.failure_weight >= 0.0) {
            return bad(format!(
                "failure_weight must be finite and >= 0, got {}",
                self.failure_weight
            ));
        }
        if !(self.block_cost.is_finite() && self.block_cost >= 0.0) {
            return bad(format!("block_cost must be finite and >= 0, got {}", self.block_cost));
        }
        if self.allocation_set.is_empty() {
            return bad("allocation set is empty".into());
        }
        if self.allocation_set.len() > usize::from(u8::MAX) {
            return bad(format!(
                "allocation set too large ({} values)",
                self.allocation_set.len()
            ));
        }
        for &phi in &self.allocation_set {
            if !(phi > 0.0 && phi < 1.0) {
                return bad(format!("allocation {phi} outside (0, 1)"));
            }
        }
        if self.allocation_set.windows(2).any(|w| w[0] >= w[1]) {
            return bad("allocation set must be strictly ascending".into());
        }
        for g in self.smoothing.as_array() {
            if !(g.is_finite() && g > 0.0) {
                return bad(format!("smoothing pseudo-count {g} must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// Position of `allocation` in `Φ`, matched within 1e-9.
    pub fn allocation_index(&self, allocation: f64) -> Option<usize> {
        self.allocation_set
            .iter()
            .position(|&phi| (phi - allocation).abs() <= 1e-9)
    }
}
