//! Dense per-level storage for values and actions.
//!
//! All tables with `t` observations are laid out by `(N_A, n_A, n_B)` in
//! lexicographic order, `N_B = t − N_A` implied. Within a fixed `(N_A, n_A)`
//! the `n_B` entries are contiguous, which is what the expectation kernel
//! walks.

use crate::state::ContingencyState;
use crate::utility::count_states;

use super::levels::PackedAction;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LevelLayout {
    pub total: u32,
    /// `offsets[x]`: index of the first table with `N_A = x`.
    offsets: Vec<usize>,
}

impl LevelLayout {
    pub fn new(total: u32) -> Self {
        let mut offsets = Vec::with_capacity(total as usize + 2);
        let mut acc = 0usize;
        for na in 0..=total {
            offsets.push(acc);
            acc += (na as usize + 1) * ((total - na) as usize + 1);
        }
        offsets.push(acc);
        debug_assert_eq!(acc as u64, count_states(u64::from(total)));
        LevelLayout { total, offsets }
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Index of the first entry for `(N_A, n_A)`; `n_B` is added by callers.
    #[inline]
    pub fn row(&self, n_assigned_a: u32, n_success_a: u32) -> usize {
        self.offsets[n_assigned_a as usize]
            + n_success_a as usize * (self.total - n_assigned_a) as usize
            + n_success_a as usize
    }

    pub fn index(&self, s: &ContingencyState) -> Option<usize> {
        if s.total() != self.total || !s.is_consistent() {
            return None;
        }
        Some(self.row(s.n_assigned_a, s.n_success_a) + s.n_success_b as usize)
    }

    /// All tables of this level in index order.
    pub fn states(&self) -> Vec<ContingencyState> {
        let t = self.total;
        let mut out = Vec::with_capacity(self.len());
        for na in 0..=t {
            let nb = t - na;
            for sa in 0..=na {
                for sb in 0..=nb {
                    out.push(ContingencyState {
                        n_assigned_a: na,
                        n_success_a: sa,
                        n_assigned_b: nb,
                        n_success_b: sb,
                    });
                }
            }
        }
        out
    }
}

/// Optimal values and actions for every table at one actionable level.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LevelTable {
    pub layout: LevelLayout,
    pub values: Vec<f64>,
    pub actions: Vec<PackedAction>,
}

impl LevelTable {
    pub fn total(&self) -> u32 {
        self.layout.total
    }
}
