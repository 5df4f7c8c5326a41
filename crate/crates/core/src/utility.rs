//! The trial utility `U(h) = V(h) − λ_F·F(h) − λ_K·K(h)`, its per-block
//! reward decomposition, and the closed forms for one- and two-block trials.

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::state::{BlockAction, ContingencyState, TrialHistory};
use crate::stats::{smoothed_rate, weight};

/// The three terms of the utility, before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityBreakdown {
    /// Power proxy `V(h)`.
    pub power: f64,
    /// Failure measure `F(h)`.
    pub failures: f64,
    /// Block count `K(h)`.
    pub blocks: usize,
}

impl UtilityBreakdown {
    pub fn total(&self, cfg: &SolverConfig) -> f64 {
        self.power - cfg.failure_weight * self.failures - cfg.block_cost * self.blocks as f64
    }
}

/// Smoothed success estimates for both arms of a cumulative table.
#[inline]
pub(crate) fn smoothed_estimates(s: &ContingencyState, cfg: &SolverConfig) -> (f64, f64) {
    let g = &cfg.smoothing;
    (
        smoothed_rate(s.n_success_a, s.n_assigned_a, g.success_a, g.failure_a),
        smoothed_rate(s.n_success_b, s.n_assigned_b, g.success_b, g.failure_b),
    )
}

/// One block's contribution to `V`: `w / (N · ½(p̂_A+p̂_B) · ½(q̂_A+q̂_B))`.
#[inline]
pub(crate) fn power_term(w: f64, p_a: f64, p_b: f64, n_patients: f64) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    4.0 * w / (n_patients * (p_a + p_b) * (2.0 - p_a - p_b))
}

/// `F(s) = (N_A − N_B)(p̂_B − p̂_A) / N` at a final table.
#[inline]
pub(crate) fn failure_term(s: &ContingencyState, p_a: f64, p_b: f64, n_patients: f64) -> f64 {
    (f64::from(s.n_assigned_a) - f64::from(s.n_assigned_b)) * (p_b - p_a) / n_patients
}

/// Evaluates `V`, `F` and `K` for a completed history.
pub fn utility_components(h: &TrialHistory, cfg: &SolverConfig) -> Result<UtilityBreakdown> {
    h.validate(cfg.n_patients)?;
    let n = f64::from(cfg.n_patients);
    let mut power = 0.0;
    for pair in h.states.windows(2) {
        let block = pair[1] - pair[0];
        let (p_a, p_b) = smoothed_estimates(&pair[1], cfg);
        power += power_term(weight(block.n_assigned_a, block.n_assigned_b), p_a, p_b, n);
    }
    let last = h.current();
    let (p_a, p_b) = smoothed_estimates(&last, cfg);
    Ok(UtilityBreakdown {
        power,
        failures: failure_term(&last, p_a, p_b, n),
        blocks: h.num_blocks(),
    })
}

/// Utility of a completed history.
pub fn utility(h: &TrialHistory, cfg: &SolverConfig) -> Result<f64> {
    Ok(utility_components(h, cfg)?.total(cfg))
}

/// Reward for the block that ends in `next_state`. Its arm counts come from
/// the action's exact assignment; the failure penalty applies only when
/// `next_state` is terminal.
pub fn reward(action: &BlockAction, next_state: &ContingencyState, cfg: &SolverConfig) -> f64 {
    let n = f64::from(cfg.n_patients);
    let (p_a, p_b) = smoothed_estimates(next_state, cfg);
    let w = weight(action.assigned_a(), action.assigned_b());
    let mut r = power_term(w, p_a, p_b, n) - cfg.block_cost;
    if next_state.total() == cfg.n_patients {
        r -= cfg.failure_weight * failure_term(next_state, p_a, p_b, n);
    }
    r
}

/// Utility of a single balanced block when the true rates are known.
pub fn single_block_utility(p_a: f64, p_b: f64, block_cost: f64) -> f64 {
    1.0 / ((p_a + p_b) * (2.0 - p_a - p_b)) - block_cost
}

/// Utility of a two-block trial with known rates: a balanced first block of
/// `block_size` patients, then `allocation` of the remaining `N − T` to arm A.
///
/// The second block's harmonic weight is `(N−T)·φ(1−φ)`, so its power term
/// carries the same factor 4 as every other block.
pub fn two_block_utility(
    p_a: f64,
    p_b: f64,
    n_patients: u32,
    block_size: u32,
    allocation: f64,
    failure_weight: f64,
    block_cost: f64,
) -> f64 {
    let n = f64::from(n_patients);
    let t = f64::from(block_size);
    let rest = n - t;
    let spread = (p_a + p_b) * (2.0 - p_a - p_b);
    (t + 4.0 * rest * allocation * (1.0 - allocation)) / (n * spread)
        + failure_weight / n * (2.0 * allocation - 1.0) * rest * (p_a - p_b)
        - 2.0 * block_cost
}

/// Smallest `λ_F` for which some two-block trial can beat a single block.
pub fn lambda_f_threshold(p_a: f64, p_b: f64, n_patients: u32, block_size: u32, block_cost: f64) -> Result<f64> {
    if p_a.partial_cmp(&p_b) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::UndefinedThreshold { p_a, p_b });
    }
    if block_size == 0 || block_size >= n_patients {
        return Err(Error::InvalidConfig(format!(
            "first block size {block_size} must lie strictly between 0 and {n_patients}"
        )));
    }
    let n = f64::from(n_patients);
    let rest = n - f64::from(block_size);
    let spread = (p_a + p_b) * (2.0 - p_a - p_b);
    Ok(2.0 / (p_a - p_b) * (n * block_cost / (rest * spread)).sqrt())
}

/// Number of 2×2 tables holding exactly `i` observations: `C(i+3, 3)`.
pub fn count_states(i: u64) -> u64 {
    (i + 1) * (i + 2) * (i + 3) / 6
}
