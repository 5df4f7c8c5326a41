use crate::config::SolverConfig;
use crate::error::{Error, MissingReason, Result};
use crate::state::{BlockAction, ContingencyState};

use super::dp::{action_value, Scratch, SuccessorTables};
use super::levels::{infeasibility_reason, LevelSchedule, PackedAction};
use super::table::{LevelLayout, LevelTable};

/// Optimal action and expected remaining utility at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyEntry {
    pub action: BlockAction,
    pub value: f64,
}

/// A solved design: the optimal action and value `U*` at every table of
/// every actionable level.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    config: SolverConfig,
    schedule: LevelSchedule,
    /// Parallel to the schedule minus its terminal level; `None` where no
    /// action is feasible.
    tables: Vec<Option<LevelTable>>,
}

impl Policy {
    pub(crate) fn from_parts(config: SolverConfig, schedule: LevelSchedule, tables: Vec<Option<LevelTable>>) -> Self {
        Policy {
            config,
            schedule,
            tables,
        }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn schedule(&self) -> &LevelSchedule {
        &self.schedule
    }

    pub fn n_patients(&self) -> u32 {
        self.config.n_patients
    }

    pub fn entry_count(&self) -> usize {
        self.tables.iter().flatten().map(|t| t.values.len()).sum()
    }

    fn table_for(&self, s: &ContingencyState) -> Result<(&LevelTable, usize)> {
        let missing = |reason| Error::StateNotInPolicy { state: *s, reason };
        let t = s.total();
        if t == self.config.n_patients && s.is_consistent() {
            return Err(missing(MissingReason::Terminal));
        }
        let pos = self.schedule.position(t).ok_or(missing(MissingReason::OffSchedule))?;
        let table = self
            .tables
            .get(pos)
            .and_then(Option::as_ref)
            .ok_or(missing(MissingReason::NotActionable))?;
        let idx = table.layout.index(s).ok_or(missing(MissingReason::NotActionable))?;
        Ok((table, idx))
    }

    pub fn entry(&self, s: &ContingencyState) -> Result<PolicyEntry> {
        let (table, idx) = self.table_for(s)?;
        Ok(PolicyEntry {
            action: table.actions[idx].unpack(&self.config),
            value: table.values[idx],
        })
    }

    /// The stored optimal action at `s`.
    pub fn lookup_action(&self, s: &ContingencyState) -> Result<BlockAction> {
        Ok(self.entry(s)?.action)
    }

    /// `U*(s)`; zero at terminal tables.
    pub fn value(&self, s: &ContingencyState) -> Result<f64> {
        if s.total() == self.config.n_patients && s.is_consistent() {
            return Ok(0.0);
        }
        Ok(self.entry(s)?.value)
    }

    /// Expected utility at the empty table.
    pub fn root_value(&self) -> f64 {
        self.value(&ContingencyState::EMPTY)
            .expect("a solved policy always has an entry for the empty table")
    }

    /// `E[R(a, s') + U*(s')]` for an arbitrary feasible action at `s`.
    pub fn action_value(&self, s: &ContingencyState, action: &BlockAction) -> Result<f64> {
        self.table_for(s)?;
        if let Some(rule) = infeasibility_reason(s, action, &self.schedule, &self.config) {
            return Err(Error::ActionInfeasible {
                state: *s,
                block_size: action.block_size,
                allocation: action.allocation,
                rule,
            });
        }
        let packed = PackedAction {
            block_size: action.block_size,
            allocation_index: self.config.allocation_index(action.allocation).unwrap() as u8,
        };
        let ctx = SuccessorTables {
            totals: self.schedule.allowed_totals(),
            tables: &self.tables,
            n_patients: self.config.n_patients,
        };
        Ok(action_value(&self.config, s, packed, &ctx, &mut Scratch::default()))
    }

    /// Entries in canonical order: by total, then `N_A`, `n_A`, `n_B`.
    pub fn entries(&self) -> impl Iterator<Item = (ContingencyState, PackedAction, f64)> + '_ {
        self.tables.iter().flatten().flat_map(|table| {
            table
                .layout
                .states()
                .into_iter()
                .zip(table.actions.iter().copied().zip(table.values.iter().copied()))
                .map(|(s, (a, v))| (s, a, v))
        })
    }

    /// Rebuilds a policy from a complete canonical entry stream.
    pub(crate) fn from_entries<I>(config: SolverConfig, schedule: LevelSchedule, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ContingencyState, PackedAction, f64)>,
    {
        let corrupt = |i: usize, msg: String| Error::CorruptFile(format!("entry {i}: {msg}"));
        let mut tables: Vec<Option<LevelTable>> = vec![None; schedule.len() - 1];
        let actionable: Vec<u32> = schedule.actionable_totals().collect();
        let mut level_iter = actionable.iter();
        let mut current: Option<(usize, LevelTable, Vec<ContingencyState>)> = None;
        let mut index = 0usize;

        let mut finish = |cur: Option<(usize, LevelTable, Vec<ContingencyState>)>, at: usize| -> Result<()> {
            if let Some((pos, table, states)) = cur {
                if table.values.len() != states.len() {
                    return Err(corrupt(
                        at,
                        format!(
                            "level {} has {} of {} entries",
                            table.total(),
                            table.values.len(),
                            states.len()
                        ),
                    ));
                }
                tables[pos] = Some(table);
            }
            Ok(())
        };

        for (s, action, value) in entries {
            let need_new = match &current {
                Some((_, table, states)) => table.values.len() == states.len(),
                None => true,
            };
            if need_new {
                finish(current.take(), index)?;
                let &total = level_iter
                    .next()
                    .ok_or_else(|| corrupt(index, "more entries than the schedule allows".into()))?;
                let layout = LevelLayout::new(total);
                let states = layout.states();
                let pos = schedule.position(total).unwrap();
                current = Some((
                    pos,
                    LevelTable {
                        layout,
                        values: Vec::with_capacity(states.len()),
                        actions: Vec::with_capacity(states.len()),
                    },
                    states,
                ));
            }
            let (_, table, states) = current.as_mut().unwrap();
            let expected = states[table.values.len()];
            if s != expected {
                return Err(corrupt(index, format!("expected state {expected}, found {s}")));
            }
            if usize::from(action.allocation_index) >= config.allocation_set.len() {
                return Err(corrupt(
                    index,
                    format!(
                        "allocation index {} out of range for {} allocations",
                        action.allocation_index,
                        config.allocation_set.len()
                    ),
                ));
            }
            let unpacked = action.unpack(&config);
            if let Some(rule) = infeasibility_reason(&s, &unpacked, &schedule, &config) {
                return Err(corrupt(index, format!("infeasible action at {s}: {rule}")));
            }
            if !value.is_finite() {
                return Err(corrupt(index, format!("non-finite value at {s}")));
            }
            table.values.push(value);
            table.actions.push(action);
            index += 1;
        }
        finish(current.take(), index)?;
        if let Some(&missing) = level_iter.next() {
            return Err(corrupt(index, format!("missing entries for level {missing}")));
        }
        Ok(Policy {
            config,
            schedule,
            tables,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{enumerate_levels, solve};

    fn small() -> Policy {
        solve(&SolverConfig::new(12, 4.0, 0.01).with_min_block(2)).unwrap()
    }

    #[test]
    fn lookup_errors() {
        let p = small();
        let terminal = ContingencyState::new(6, 3, 6, 3).unwrap();
        assert!(matches!(
            p.lookup_action(&terminal),
            Err(Error::StateNotInPolicy {
                reason: MissingReason::Terminal,
                ..
            })
        ));
        let off = ContingencyState::new(2, 1, 1, 0).unwrap();
        assert!(matches!(
            p.lookup_action(&off),
            Err(Error::StateNotInPolicy {
                reason: MissingReason::OffSchedule,
                ..
            })
        ));
        assert_eq!(p.value(&terminal).unwrap(), 0.0);
    }

    #[test]
    fn root_action_is_near_balanced() {
        let p = small();
        let a = p.lookup_action(&ContingencyState::EMPTY).unwrap();
        assert!((a.allocation - 0.5).abs() <= 0.1 + 1e-12, "{a:?}");
        assert!(p.schedule().is_live(a.block_size));
    }

    #[test]
    fn stored_action_reproduces_stored_value() {
        let p = small();
        for (s, a, v) in p.entries() {
            let q = p.action_value(&s, &a.unpack(p.config())).unwrap();
            assert!((q - v).abs() < 1e-9, "{s}: {q} vs {v}");
        }
    }

    #[test]
    fn entries_round_trip_through_from_entries() {
        let p = small();
        let schedule = enumerate_levels(p.config()).unwrap();
        let rebuilt = Policy::from_entries(p.config().clone(), schedule.clone(), p.entries()).unwrap();
        assert_eq!(rebuilt, p);

        let mut truncated: Vec<_> = p.entries().collect();
        truncated.pop();
        assert!(matches!(
            Policy::from_entries(p.config().clone(), schedule, truncated),
            Err(Error::CorruptFile(_))
        ));
    }
}
