mod common;

use std::sync::Arc;

use blockrar::sim::{simulate_trial, Design};
use blockrar::solver::{brute_force_value_at, feasible_actions, solve_with, stored_state_count, SolveOptions};
use blockrar::{
    brute_force_value, count_states, enumerate_levels, solve, utility, BlockAction, ContingencyState, SolverConfig,
    StratumTable, TrialHistory,
};
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

#[test]
fn oracle_agrees_at_root_and_interior_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..12 {
        let cfg = common::random_config(&mut rng, 12);
        let policy = solve(&cfg).unwrap();
        assert!(
            (policy.root_value() - brute_force_value(&cfg).unwrap()).abs() <= 1e-9,
            "{cfg:?}"
        );
        let states: Vec<ContingencyState> = policy.entries().map(|(s, _, _)| s).collect();
        for s in states.choose_multiple(&mut rng, 100) {
            let oracle = brute_force_value_at(&cfg, s).unwrap();
            let dp = policy.value(s).unwrap();
            assert!((dp - oracle).abs() <= 1e-9, "{cfg:?} at {s}: {dp} vs {oracle}");
        }
    }
}

/// Expectimax over complete histories, scored only by `utility(h)` at the
/// leaves. Outcomes are expanded patient by patient through the sequential
/// urn, so no closed-form predictive distribution is involved.
fn history_value(cfg: &SolverConfig, h: &TrialHistory) -> Option<f64> {
    let s = h.current();
    if s.total() == cfg.n_patients {
        return Some(utility(h, cfg).unwrap());
    }
    let schedule = enumerate_levels(cfg).unwrap();
    let actions = feasible_actions(&s, &schedule, cfg).ok()?;
    actions
        .iter()
        .filter_map(|a| action_expectation(cfg, h, a))
        .reduce(f64::max)
}

fn action_expectation(cfg: &SolverConfig, h: &TrialHistory, a: &BlockAction) -> Option<f64> {
    let g = cfg.smoothing;
    let s = h.current();
    let mut total = 0.0;
    for (sa, pa) in urn(a.assigned_a(), s.n_success_a, s.n_assigned_a, g.success_a, g.failure_a) {
        for (sb, pb) in urn(a.assigned_b(), s.n_success_b, s.n_assigned_b, g.success_b, g.failure_b) {
            let mut next = h.clone();
            next.push(
                *a,
                StratumTable::from_outcomes(sa, a.assigned_a() - sa, sb, a.assigned_b() - sb),
            );
            total += pa * pb * history_value(cfg, &next)?;
        }
    }
    Some(total)
}

/// Distribution of successes among `m` new patients, summed over all
/// `2^m` outcome sequences.
fn urn(m: u32, successes: u32, assigned: u32, g1: f64, g0: f64) -> Vec<(u32, f64)> {
    let mut dist = vec![0.0; m as usize + 1];
    for seq in 0u32..(1 << m) {
        let (mut k, mut n, mut p) = (successes, assigned, 1.0);
        let mut wins = 0;
        for bit in 0..m {
            let q = (f64::from(k) + g1) / (f64::from(n) + g1 + g0);
            if seq >> bit & 1 == 1 {
                p *= q;
                k += 1;
                wins += 1;
            } else {
                p *= 1.0 - q;
            }
            n += 1;
        }
        dist[wins] += p;
    }
    dist.into_iter().enumerate().map(|(k, p)| (k as u32, p)).collect()
}

#[test]
fn history_expectimax_matches_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let cfg = common::random_config(&mut rng, 6);
        let expected = history_value(&cfg, &TrialHistory::new()).unwrap();
        let got = solve(&cfg).unwrap().root_value();
        assert!((got - expected).abs() <= 1e-9, "{cfg:?}: {got} vs {expected}");
    }
}

#[test]
fn bellman_residual_and_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..6 {
        let cfg = common::random_config(&mut rng, 16);
        let policy = solve(&cfg).unwrap();
        for (s, packed, value) in policy.entries() {
            let stored = packed.unpack(&cfg);
            let q = policy.action_value(&s, &stored).unwrap();
            assert!((q - value).abs() <= 1e-9, "{s}: {q} vs {value}");
            for a in feasible_actions(&s, policy.schedule(), &cfg).unwrap() {
                assert!(policy.action_value(&s, &a).unwrap() <= value + 1e-9);
            }
        }
    }
}

#[test]
fn ties_prefer_smaller_allocation() {
    // Arm exchange makes φ and 1−φ exactly equivalent at the empty table.
    let cfg = SolverConfig::new(10, 0.0, 0.01)
        .with_allocation_set(vec![0.4, 0.6])
        .with_min_block(10);
    let policy = solve(&cfg).unwrap();
    assert_eq!(
        policy.lookup_action(&ContingencyState::EMPTY).unwrap(),
        BlockAction::new(10, 0.4)
    );
}

#[test]
fn identical_across_thread_counts() {
    let cfg = SolverConfig::new(24, 3.0, 0.02);
    let reference = solve(&cfg).unwrap();
    for threads in [1, 2, 7] {
        let opts = SolveOptions {
            threads: Some(threads),
            ..Default::default()
        };
        let p = solve_with(&cfg, &opts, |_| {}).unwrap();
        assert_eq!(p, reference);
        assert!(p
            .entries()
            .zip(reference.entries())
            .all(|(a, b)| a.2.to_bits() == b.2.to_bits()));
    }
}

/// Mean utility of a design when each trial's rates are drawn from the
/// smoothing prior, as the solver's own model assumes.
fn prior_predictive_utility(design: &Design, cfg: &SolverConfig, sims: u64, seed: u64) -> (f64, f64) {
    let g = cfg.smoothing;
    let prior_a = Beta::new(g.success_a, g.failure_a).unwrap();
    let prior_b = Beta::new(g.success_b, g.failure_b).unwrap();
    let mut values = Vec::with_capacity(sims as usize);
    for i in 0..sims {
        let mut rng = blockrar::sim::trial_rng(seed, i);
        let pa: f64 = prior_a.sample(&mut rng);
        let pb: f64 = prior_b.sample(&mut rng);
        let (pa, pb) = (pa.clamp(1e-12, 1.0 - 1e-12), pb.clamp(1e-12, 1.0 - 1e-12));
        let h = simulate_trial(design, pa, pb, cfg.n_patients, &mut rng).unwrap();
        values.push(utility(&h, cfg).unwrap());
    }
    let n = sims as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn optimal_value_dominates_fixed_design_under_the_prior() {
    let cfg = SolverConfig::new(16, 4.0, 0.01);
    let policy = Arc::new(solve(&cfg).unwrap());
    let u_star = policy.root_value();
    let (fixed, se_fixed) = prior_predictive_utility(&Design::OneToOne, &cfg, 100_000, 1);
    assert!(
        u_star >= fixed - 2.576 * se_fixed,
        "U* {u_star} vs 1:1 {fixed} ± {se_fixed}"
    );
    let (own, se_own) = prior_predictive_utility(&Design::Mdp(policy), &cfg, 100_000, 2);
    assert!(
        (own - u_star).abs() <= 2.576 * se_own,
        "U* {u_star} vs simulated {own} ± {se_own}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stored_states_follow_the_level_formula(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = common::random_config(&mut rng, 20);
        let schedule = enumerate_levels(&cfg).unwrap();
        let policy = solve(&cfg).unwrap();
        let expected: u64 = schedule.actionable_totals().map(|t| count_states(u64::from(t))).sum();
        prop_assert_eq!(policy.entry_count() as u64, expected);
        prop_assert_eq!(stored_state_count(&schedule), expected);
        if schedule.allowed_totals().iter().all(|&t| schedule.is_live(t)) {
            let interior: u64 = schedule.allowed_totals()[1..schedule.len() - 1]
                .iter()
                .map(|&t| count_states(u64::from(t)))
                .sum();
            prop_assert_eq!(expected, interior + 1);
        }
    }

    #[test]
    fn value_is_symmetric_under_arm_exchange(seed in any::<u64>()) {
        // Blocks are multiples of 4 so no allocation rounds from exactly .5,
        // which would favour arm A.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4 * rng.random_range(1..=5u32);
        let cfg = SolverConfig::new(n, rng.random_range(0.0..6.0), rng.random_range(0.0..0.1))
            .with_allocation_set(vec![0.25, 0.5, 0.75])
            .with_min_block(4 * rng.random_range(1..=n / 4))
            .with_block_increment(4)
            .with_smoothing(blockrar::Smoothing::uniform(rng.random_range(0.5..2.0)));
        let policy = solve(&cfg).unwrap();
        for (s, _, v) in policy.entries() {
            let w = policy.value(&s.swapped()).unwrap();
            prop_assert!((v - w).abs() <= 1e-9 * v.abs().max(1.0), "{} vs {}", v, w);
        }
    }
}
