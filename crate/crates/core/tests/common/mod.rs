#![allow(dead_code)]

use blockrar::{BlockAction, ContingencyState, Smoothing, SolverConfig, StratumTable, TrialHistory};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const GRID: [f64; 7] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];

/// A random solvable configuration with at most `max_n` patients.
pub fn random_config<R: Rng>(rng: &mut R, max_n: u32) -> SolverConfig {
    loop {
        let n = rng.random_range(2..=max_n);
        let mut phis: Vec<f64> = GRID.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
        if phis.is_empty() {
            phis.push(*GRID.choose(rng).unwrap());
        }
        let cfg = SolverConfig::new(n, rng.random_range(0.0..6.0), rng.random_range(0.0..0.1))
            .with_allocation_set(phis)
            .with_min_block(rng.random_range(1..=n.div_ceil(2)))
            .with_block_increment(rng.random_range(1..=3))
            .with_smoothing(Smoothing {
                success_a: rng.random_range(0.5..2.0),
                failure_a: rng.random_range(0.5..2.0),
                success_b: rng.random_range(0.5..2.0),
                failure_b: rng.random_range(0.5..2.0),
            });
        let schedule = blockrar::enumerate_levels(&cfg).unwrap();
        if schedule.is_live(0) {
            return cfg;
        }
    }
}

/// A random complete history of `n` patients with arbitrary block sizes,
/// allocations and outcomes. Arm counts follow each action's rounding.
pub fn random_history<R: Rng>(rng: &mut R, n: u32) -> TrialHistory {
    let mut h = TrialHistory::new();
    while h.current().total() < n {
        let left = n - h.current().total();
        let block = rng.random_range(1..=left);
        let phi = rng.random_range(0.05..0.95);
        let action = BlockAction::new(block, phi);
        let (a, b) = (action.assigned_a(), action.assigned_b());
        let sa = rng.random_range(0..=a);
        let sb = rng.random_range(0..=b);
        h.push(action, StratumTable::from_outcomes(sa, a - sa, sb, b - sb));
    }
    h
}

/// Every consistent table with `total` observations, by brute force.
pub fn enumerate_tables(total: u32) -> Vec<ContingencyState> {
    let mut out = Vec::new();
    for na in 0..=total {
        for sa in 0..=na {
            for nb in 0..=total {
                for sb in 0..=nb {
                    if na + nb == total {
                        out.push(ContingencyState::new(na, sa, nb, sb).unwrap());
                    }
                }
            }
        }
    }
    out
}
