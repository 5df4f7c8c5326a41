use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::state::{BlockAction, ContingencyState};

/// The cumulative totals the solver visits after pruning by `T_min` and `κ`.
///
/// A level is *live* when the trial can still finish from it: it is terminal,
/// or some block of at least `T_min` patients with both arms populated leads
/// to another live level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSchedule {
    allowed_totals: Vec<u32>,
    live: Vec<bool>,
}

impl LevelSchedule {
    pub fn allowed_totals(&self) -> &[u32] {
        &self.allowed_totals
    }

    pub fn n_patients(&self) -> u32 {
        *self.allowed_totals.last().expect("schedule always holds N")
    }

    pub fn len(&self) -> usize {
        self.allowed_totals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed_totals.is_empty()
    }

    /// Position of `total` in the schedule.
    pub fn position(&self, total: u32) -> Option<usize> {
        self.allowed_totals.binary_search(&total).ok()
    }

    pub fn contains(&self, total: u32) -> bool {
        self.position(total).is_some()
    }

    pub fn is_live(&self, total: u32) -> bool {
        self.position(total).is_some_and(|i| self.live[i])
    }

    /// Non-terminal totals that admit at least one action.
    pub fn actionable_totals(&self) -> impl Iterator<Item = u32> + '_ {
        let n = self.n_patients();
        self.allowed_totals
            .iter()
            .zip(&self.live)
            .filter(move |(&t, &live)| live && t < n)
            .map(|(&t, _)| t)
    }

    /// Allowed totals bracketing `total` (for off-schedule reporting).
    pub fn nearest(&self, total: u32) -> (Option<u32>, Option<u32>) {
        let below = self.allowed_totals.iter().rev().find(|&&t| t <= total).copied();
        let above = self.allowed_totals.iter().find(|&&t| t >= total).copied();
        (below, above)
    }
}

/// `{0} ∪ {i : T_min ≤ i ≤ N − T_min, κ | i} ∪ {N}`, ascending.
pub fn enumerate_levels(cfg: &SolverConfig) -> Result<LevelSchedule> {
    cfg.validate()?;
    let n = cfg.n_patients;
    let mut totals = vec![0];
    if n >= cfg.min_block {
        let lo = cfg.min_block.max(1);
        let hi = n - cfg.min_block;
        totals.extend((lo..=hi).filter(|i| i % cfg.block_increment == 0 && *i != 0 && *i != n));
    }
    if n != 0 {
        totals.push(n);
    }
    totals.dedup();

    let mut live = vec![false; totals.len()];
    let last = totals.len() - 1;
    live[last] = true;
    for i in (0..last).rev() {
        live[i] = (i + 1..totals.len()).any(|j| {
            let block = totals[j] - totals[i];
            live[j] && block >= cfg.min_block && block_admits_some_allocation(block, cfg)
        });
    }
    Ok(LevelSchedule {
        allowed_totals: totals,
        live,
    })
}

fn block_admits_some_allocation(block: u32, cfg: &SolverConfig) -> bool {
    cfg.allocation_set
        .iter()
        .any(|&phi| BlockAction::new(block, phi).has_both_arms())
}

/// Compact action: block size and position in `Φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PackedAction {
    pub block_size: u32,
    pub allocation_index: u8,
}

impl PackedAction {
    pub fn unpack(&self, cfg: &SolverConfig) -> BlockAction {
        BlockAction::new(self.block_size, cfg.allocation_set[usize::from(self.allocation_index)])
    }
}

/// Actions available from any state at cumulative total `total`, in
/// tie-breaking preference order: larger blocks first, then allocations
/// closest to 1:1, then smaller allocations.
pub(crate) fn level_actions(total: u32, schedule: &LevelSchedule, cfg: &SolverConfig) -> Vec<PackedAction> {
    let mut by_phi: Vec<(usize, f64)> = cfg.allocation_set.iter().copied().enumerate().collect();
    by_phi.sort_by(|a, b| {
        let da = (a.1 - 0.5).abs();
        let db = (b.1 - 0.5).abs();
        da.total_cmp(&db).then(a.1.total_cmp(&b.1))
    });
    let mut out = Vec::new();
    for &next in schedule.allowed_totals().iter().rev() {
        if next <= total {
            break;
        }
        let block = next - total;
        if block < cfg.min_block || !schedule.is_live(next) {
            continue;
        }
        for &(idx, phi) in &by_phi {
            if BlockAction::new(block, phi).has_both_arms() {
                out.push(PackedAction {
                    block_size: block,
                    allocation_index: idx as u8,
                });
            }
        }
    }
    out
}

/// Every schedule-respecting action at `s`, in tie-breaking preference order.
pub fn feasible_actions(
    s: &ContingencyState,
    schedule: &LevelSchedule,
    cfg: &SolverConfig,
) -> Result<Vec<BlockAction>> {
    let t = s.total();
    if !schedule.contains(t) || t >= schedule.n_patients() {
        return Err(Error::InvariantViolation(format!(
            "state {s} is not at a non-terminal allowed level"
        )));
    }
    Ok(level_actions(t, schedule, cfg)
        .into_iter()
        .map(|a| a.unpack(cfg))
        .collect())
}

/// Explains why `action` is not available at `s`, or `None` when it is.
pub fn infeasibility_reason(
    s: &ContingencyState,
    action: &BlockAction,
    schedule: &LevelSchedule,
    cfg: &SolverConfig,
) -> Option<String> {
    let t = s.total();
    if !schedule.contains(t) || t >= cfg.n_patients {
        return Some(format!("current total {t} is not a non-terminal allowed level"));
    }
    if cfg.allocation_index(action.allocation).is_none() {
        return Some(format!("allocation {} is not in the configured set", action.allocation));
    }
    if action.block_size < cfg.min_block {
        return Some(format!(
            "block size {} is below the minimum {}",
            action.block_size, cfg.min_block
        ));
    }
    if action.block_size > cfg.n_patients - t {
        return Some(format!(
            "block size {} exceeds the {} remaining patients",
            action.block_size,
            cfg.n_patients - t
        ));
    }
    let next = t + action.block_size;
    if !schedule.contains(next) {
        return Some(format!("cumulative total {next} is not an allowed level"));
    }
    if !schedule.is_live(next) {
        return Some(format!("no feasible continuation from cumulative total {next}"));
    }
    if !action.has_both_arms() {
        return Some("rounded assignment leaves an arm empty".into());
    }
    None
}
