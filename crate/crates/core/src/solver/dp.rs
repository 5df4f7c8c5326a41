//! Backward induction over the pruned level schedule.

use rayon::prelude::*;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::state::ContingencyState;
use crate::stats::{beta_binomial_pmf_into, smoothed_rate, weight};
use crate::utility::{count_states, power_term};

use super::levels::{enumerate_levels, level_actions, LevelSchedule, PackedAction};
use super::policy::Policy;
use super::table::{LevelLayout, LevelTable};

/// Relative gap below which two action values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Default cap on stored states (~16 bytes each).
pub const DEFAULT_STATE_BUDGET: u64 = 60_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    /// Levels finished so far, counting down from the top of the schedule.
    pub levels_done: usize,
    pub levels_total: usize,
    /// Cumulative total of the level just finished.
    pub level_total: u32,
    pub states_done: u64,
    pub states_total: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub state_budget: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            state_budget: DEFAULT_STATE_BUDGET,
            threads: None,
        }
    }
}

/// Number of tables the solver stores for `schedule`: every table at every
/// actionable level.
pub fn stored_state_count(schedule: &LevelSchedule) -> u64 {
    schedule.actionable_totals().map(|t| count_states(u64::from(t))).sum()
}

/// Solves with default options.
pub fn solve(cfg: &SolverConfig) -> Result<Policy> {
    solve_with(cfg, &SolveOptions::default(), |_| {})
}

/// Computes the optimal policy, reporting progress after each level.
pub fn solve_with<F>(cfg: &SolverConfig, opts: &SolveOptions, progress: F) -> Result<Policy>
where
    F: FnMut(Progress) + Send,
{
    let schedule = enumerate_levels(cfg)?;
    let states_total = stored_state_count(&schedule);
    if states_total > opts.state_budget {
        return Err(Error::SolverCapacity {
            n_patients: cfg.n_patients,
            min_block: cfg.min_block,
            block_increment: cfg.block_increment,
            states: states_total,
            budget: opts.state_budget,
        });
    }
    if !schedule.is_live(0) {
        return Err(Error::InvalidConfig(format!(
            "no feasible first block for N={} with T_min={} and the given allocation set",
            cfg.n_patients, cfg.min_block
        )));
    }
    match opts.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(|| backward_sweep(cfg, schedule, states_total, progress)))
        }
        None => Ok(backward_sweep(cfg, schedule, states_total, progress)),
    }
}

fn backward_sweep<F>(cfg: &SolverConfig, schedule: LevelSchedule, states_total: u64, mut progress: F) -> Policy
where
    F: FnMut(Progress),
{
    let totals = schedule.allowed_totals().to_vec();
    let terminal = totals.len() - 1;
    let mut tables: Vec<Option<LevelTable>> = vec![None; terminal];
    let levels_total = schedule.actionable_totals().count();
    let mut levels_done = 0;
    let mut states_done = 0u64;

    for li in (0..terminal).rev() {
        let total = totals[li];
        if !schedule.is_live(total) {
            continue;
        }
        let actions = level_actions(total, &schedule, cfg);
        let layout = LevelLayout::new(total);
        let states = layout.states();
        let results: Vec<(f64, PackedAction)> = {
            let ctx = SuccessorTables {
                totals: &totals,
                tables: &tables,
                n_patients: cfg.n_patients,
            };
            states
                .par_iter()
                .map_init(Scratch::default, |scratch, s| {
                    best_action(cfg, s, &actions, &ctx, scratch)
                })
                .collect()
        };
        let (values, acts) = results.into_iter().unzip();
        states_done += states.len() as u64;
        tables[li] = Some(LevelTable {
            layout,
            values,
            actions: acts,
        });
        levels_done += 1;
        progress(Progress {
            levels_done,
            levels_total,
            level_total: total,
            states_done,
            states_total,
        });
    }
    Policy::from_parts(cfg.clone(), schedule, tables)
}

/// Read access to already-finalized levels.
pub(crate) struct SuccessorTables<'a> {
    pub totals: &'a [u32],
    pub tables: &'a [Option<LevelTable>],
    pub n_patients: u32,
}

impl SuccessorTables<'_> {
    /// `None` for the terminal level, whose values are implicitly zero.
    fn level(&self, total: u32) -> Option<&LevelTable> {
        if total == self.n_patients {
            return None;
        }
        let i = self
            .totals
            .binary_search(&total)
            .expect("actions only land on allowed levels");
        Some(
            self.tables[i]
                .as_ref()
                .expect("successor level solved before predecessors"),
        )
    }
}

#[derive(Default)]
pub(crate) struct Scratch {
    pmf_a: Vec<f64>,
    pmf_b: Vec<f64>,
    est_b: Vec<f64>,
}

fn best_action(
    cfg: &SolverConfig,
    s: &ContingencyState,
    actions: &[PackedAction],
    ctx: &SuccessorTables<'_>,
    scratch: &mut Scratch,
) -> (f64, PackedAction) {
    let mut best = (action_value(cfg, s, actions[0], ctx, scratch), actions[0]);
    for &a in &actions[1..] {
        let v = action_value(cfg, s, a, ctx, scratch);
        if v > best.0 + TIE_TOLERANCE * best.0.abs().max(1.0) {
            best = (v, a);
        }
    }
    best
}

/// `E_{s'∼t(s,a)}[R(a, s') + U*(s')]` read from finalized successor levels.
pub(crate) fn action_value(
    cfg: &SolverConfig,
    s: &ContingencyState,
    action: PackedAction,
    ctx: &SuccessorTables<'_>,
    scratch: &mut Scratch,
) -> f64 {
    let phi = cfg.allocation_set[usize::from(action.allocation_index)];
    let assigned_a = crate::state::exact_assignment(action.block_size, phi);
    let assigned_b = action.block_size - assigned_a;
    let g = &cfg.smoothing;
    let n = f64::from(cfg.n_patients);

    beta_binomial_pmf_into(
        assigned_a,
        f64::from(s.n_success_a) + g.success_a,
        f64::from(s.n_failure_a()) + g.failure_a,
        &mut scratch.pmf_a,
    );
    beta_binomial_pmf_into(
        assigned_b,
        f64::from(s.n_success_b) + g.success_b,
        f64::from(s.n_failure_b()) + g.failure_b,
        &mut scratch.pmf_b,
    );

    let next_a = s.n_assigned_a + assigned_a;
    let next_b = s.n_assigned_b + assigned_b;
    scratch.est_b.clear();
    scratch
        .est_b
        .extend((0..=assigned_b).map(|kb| smoothed_rate(s.n_success_b + kb, next_b, g.success_b, g.failure_b)));

    let w = weight(assigned_a, assigned_b);
    let next_level = ctx.level(s.total() + action.block_size);
    let imbalance = f64::from(next_a) - f64::from(next_b);

    let mut outer = NeumaierSum::default();
    for (ka, &prob_a) in scratch.pmf_a.iter().enumerate() {
        let ka = ka as u32;
        let p_a = smoothed_rate(s.n_success_a + ka, next_a, g.success_a, g.failure_a);
        let mut inner = NeumaierSum::default();
        match next_level {
            Some(table) => {
                let base = table.layout.row(next_a, s.n_success_a + ka) + s.n_success_b as usize;
                let row = &table.values[base..base + assigned_b as usize + 1];
                for ((&prob_b, &p_b), &future) in scratch.pmf_b.iter().zip(&scratch.est_b).zip(row) {
                    let r = power_term(w, p_a, p_b, n) - cfg.block_cost;
                    inner.add(prob_b * (r + future));
                }
            }
            None => {
                for (&prob_b, &p_b) in scratch.pmf_b.iter().zip(&scratch.est_b) {
                    let r =
                        power_term(w, p_a, p_b, n) - cfg.block_cost - cfg.failure_weight * imbalance * (p_b - p_a) / n;
                    inner.add(prob_b * r);
                }
            }
        }
        outer.add(prob_a * inner.total());
    }
    outer.total()
}

/// Compensated summation.
#[derive(Default, Clone, Copy)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::BlockAction;

    fn toy() -> SolverConfig {
        SolverConfig::new(2, 4.0, 0.01)
            .with_allocation_set(vec![0.5])
            .with_min_block(1)
            .with_block_increment(1)
    }

    #[test]
    fn toy_value() {
        let policy = solve(&toy()).unwrap();
        let root = policy.entry(&ContingencyState::EMPTY).unwrap();
        assert!((root.value - 1.0525).abs() < 1e-12);
        assert_eq!(root.action, BlockAction::new(2, 0.5));
        assert_eq!(policy.entry_count(), 1);
    }

    #[test]
    fn capacity_error_names_the_config() {
        let cfg = SolverConfig::new(60, 4.0, 0.01);
        let opts = SolveOptions {
            state_budget: 100,
            threads: None,
        };
        match solve_with(&cfg, &opts, |_| {}) {
            Err(Error::SolverCapacity {
                n_patients,
                min_block,
                block_increment,
                ..
            }) => assert_eq!((n_patients, min_block, block_increment), (60, 8, 2)),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn unsolvable_config() {
        let cfg = SolverConfig::new(1, 4.0, 0.01).with_min_block(1);
        assert!(matches!(solve(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn progress_reaches_every_level() {
        let cfg = SolverConfig::new(16, 4.0, 0.01);
        let mut seen = Vec::new();
        let policy = solve_with(&cfg, &SolveOptions::default(), |p| seen.push(p)).unwrap();
        let last = seen.last().unwrap();
        assert_eq!(last.levels_done, last.levels_total);
        assert_eq!(last.states_done, last.states_total);
        assert_eq!(last.level_total, 0);
        assert_eq!(last.states_total, policy.entry_count() as u64);
    }

    #[test]
    fn stored_states_match_closed_form() {
        let cfg = SolverConfig::new(20, 4.0, 0.01).with_min_block(4);
        let policy = solve(&cfg).unwrap();
        let expected: u64 = [4u64, 6, 8, 10, 12, 14, 16]
            .iter()
            .map(|&t| count_states(t))
            .sum::<u64>()
            + 1;
        assert_eq!(policy.entry_count() as u64, expected);
    }

    #[test]
    fn neumaier_recovers_small_terms() {
        let mut s = NeumaierSum::default();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert!((s.total() - 1e-16).abs() < 1e-30);
    }
}
