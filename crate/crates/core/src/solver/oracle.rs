//! Exhaustive reference for small instances.
//!
//! Walks the decision tree top-down from a state, maximizing over every
//! action sequence and summing over every outcome branch. It shares only
//! the problem definition with the solver: allowed totals are rebuilt from
//! first principles, predictive probabilities come from the exact rising
//! factorial product instead of log-gamma, block rewards are re-derived
//! from the utility terms, and repeated subtrees are cached in a hash map
//! rather than dense level arrays.

use std::collections::HashMap;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::state::{BlockAction, ContingencyState};
use crate::utility::count_states;

/// Largest pruned state space the oracle will enumerate.
pub const ORACLE_STATE_CAP: u64 = 100_000;

/// Exact optimal expected utility from the empty table.
pub fn brute_force_value(cfg: &SolverConfig) -> Result<f64> {
    brute_force_value_at(cfg, &ContingencyState::EMPTY)
}

/// Exact optimal expected utility from an arbitrary on-schedule table.
pub fn brute_force_value_at(cfg: &SolverConfig, start: &ContingencyState) -> Result<f64> {
    cfg.validate()?;
    let n = cfg.n_patients;
    let levels: Vec<u32> = (0..=n)
        .filter(|&i| i == 0 || i == n || (i >= cfg.min_block && i + cfg.min_block <= n && i % cfg.block_increment == 0))
        .collect();
    let states: u64 = levels
        .iter()
        .filter(|&&i| i < n)
        .map(|&i| count_states(u64::from(i)))
        .sum();
    if states > ORACLE_STATE_CAP {
        return Err(Error::OracleCapacity {
            states,
            cap: ORACLE_STATE_CAP,
        });
    }
    if !levels.contains(&start.total()) || !start.is_consistent() {
        return Err(Error::InvariantViolation(format!("{start} is not on the schedule")));
    }
    let mut search = Search {
        cfg,
        levels,
        memo: HashMap::new(),
    };
    search
        .best(start)
        .ok_or_else(|| Error::InvalidConfig("no feasible continuation from the start state".into()))
}

struct Search<'a> {
    cfg: &'a SolverConfig,
    levels: Vec<u32>,
    memo: HashMap<ContingencyState, Option<f64>>,
}

impl Search<'_> {
    /// `None` when no action sequence can complete the trial from `s`.
    fn best(&mut self, s: &ContingencyState) -> Option<f64> {
        let n = self.cfg.n_patients;
        if s.total() == n {
            return Some(0.0);
        }
        if let Some(&v) = self.memo.get(s) {
            return v;
        }
        let mut best: Option<f64> = None;
        let nexts: Vec<u32> = self.levels.iter().copied().filter(|&j| j > s.total()).collect();
        for j in nexts {
            let block = j - s.total();
            if block < self.cfg.min_block {
                continue;
            }
            for phi in self.cfg.allocation_set.clone() {
                let action = BlockAction::new(block, phi);
                let a = action.assigned_a();
                let b = block - a;
                if a == 0 || b == 0 {
                    continue;
                }
                if let Some(v) = self.expectation(s, a, b) {
                    best = Some(best.map_or(v, |cur: f64| cur.max(v)));
                }
            }
        }
        self.memo.insert(*s, best);
        best
    }

    fn expectation(&mut self, s: &ContingencyState, a: u32, b: u32) -> Option<f64> {
        let cfg = self.cfg;
        let g = cfg.smoothing;
        let n = f64::from(cfg.n_patients);
        let alpha_a = f64::from(s.n_success_a) + g.success_a;
        let beta_a = f64::from(s.n_assigned_a - s.n_success_a) + g.failure_a;
        let alpha_b = f64::from(s.n_success_b) + g.success_b;
        let beta_b = f64::from(s.n_assigned_b - s.n_success_b) + g.failure_b;
        let mut total = 0.0;
        for ka in 0..=a {
            let pa = rising_product_pmf(a, ka, alpha_a, beta_a);
            for kb in 0..=b {
                let pb = rising_product_pmf(b, kb, alpha_b, beta_b);
                let next = ContingencyState {
                    n_assigned_a: s.n_assigned_a + a,
                    n_success_a: s.n_success_a + ka,
                    n_assigned_b: s.n_assigned_b + b,
                    n_success_b: s.n_success_b + kb,
                };
                let est_a = (f64::from(next.n_success_a) + g.success_a)
                    / (f64::from(next.n_assigned_a) + g.success_a + g.failure_a);
                let est_b = (f64::from(next.n_success_b) + g.success_b)
                    / (f64::from(next.n_assigned_b) + g.success_b + g.failure_b);
                let harmonic = f64::from(a) * f64::from(b) / f64::from(a + b);
                let pooled_var = 0.5 * (est_a + est_b) * 0.5 * ((1.0 - est_a) + (1.0 - est_b));
                let mut r = harmonic / pooled_var / n - cfg.block_cost;
                if next.total() == cfg.n_patients {
                    let diff = f64::from(next.n_assigned_a) - f64::from(next.n_assigned_b);
                    r -= cfg.failure_weight * diff * (est_b - est_a) / n;
                }
                let future = self.best(&next)?;
                total += pa * pb * (r + future);
            }
        }
        Some(total)
    }
}

/// `C(n,k) · α^(k) β^(n−k) / (α+β)^(n)` with rising factorials.
fn rising_product_pmf(n: u32, k: u32, alpha: f64, beta: f64) -> f64 {
    let mut p = 1.0;
    for i in 0..k {
        p *= f64::from(n - i) / f64::from(i + 1);
    }
    for i in 0..k {
        p *= alpha + f64::from(i);
    }
    for i in 0..(n - k) {
        p *= beta + f64::from(i);
    }
    for i in 0..n {
        p /= alpha + beta + f64::from(i);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_value() {
        let cfg = SolverConfig::new(2, 4.0, 0.01)
            .with_allocation_set(vec![0.5])
            .with_min_block(1)
            .with_block_increment(1);
        assert!((brute_force_value(&cfg).unwrap() - 1.0525).abs() < 1e-12);
    }

    #[test]
    fn rising_product_matches_known_values() {
        assert!((rising_product_pmf(2, 1, 2.0, 2.0) - 0.4).abs() < 1e-15);
        assert!((rising_product_pmf(1, 1, 2.0, 1.0) - 2.0 / 3.0).abs() < 1e-15);
        let total: f64 = (0..=9).map(|k| rising_product_pmf(9, k, 3.5, 1.25)).sum();
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn single_level_schedule_is_one_action_max() {
        // {0, N}: the value is the best single-block expectation.
        let cfg = SolverConfig::new(6, 2.0, 0.05).with_min_block(6);
        let v = brute_force_value(&cfg).unwrap();
        let mut search = Search {
            cfg: &cfg,
            levels: vec![0, 6],
            memo: HashMap::new(),
        };
        let best = cfg
            .allocation_set
            .iter()
            .filter_map(|&phi| {
                let a = BlockAction::new(6, phi);
                (a.has_both_arms())
                    .then(|| search.expectation(&ContingencyState::EMPTY, a.assigned_a(), a.assigned_b()))
            })
            .flatten()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(v, best);
    }

    #[test]
    fn capacity() {
        let cfg = SolverConfig::new(60, 4.0, 0.01)
            .with_min_block(1)
            .with_block_increment(1);
        assert!(matches!(brute_force_value(&cfg), Err(Error::OracleCapacity { .. })));
    }
}
