use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::state::{BlockAction, ContingencyState, StratumTable};
use crate::stats::beta_binomial_pmf;

/// Per-arm Beta-Binomial predictive distributions of a block's successes.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutcomeDistribution {
    /// `pmf_a[k]`: probability of `k` successes among arm A's patients.
    pub pmf_a: Vec<f64>,
    pub pmf_b: Vec<f64>,
}

impl BlockOutcomeDistribution {
    pub fn new(s: &ContingencyState, assigned_a: u32, assigned_b: u32, cfg: &SolverConfig) -> Self {
        let g = &cfg.smoothing;
        let pmf_a = beta_binomial_pmf(
            assigned_a,
            f64::from(s.n_success_a) + g.success_a,
            f64::from(s.n_failure_a()) + g.failure_a,
        );
        let pmf_b = beta_binomial_pmf(
            assigned_b,
            f64::from(s.n_success_b) + g.success_b,
            f64::from(s.n_failure_b()) + g.failure_b,
        );
        BlockOutcomeDistribution { pmf_a, pmf_b }
    }
}

/// Full successor distribution `t(s, a)`: every reachable next table with
/// its probability, arm-A successes varying slowest.
pub fn transition_pmf(
    s: &ContingencyState,
    action: &BlockAction,
    cfg: &SolverConfig,
) -> Result<Vec<(f64, ContingencyState)>> {
    let infeasible = |rule: &str| Error::ActionInfeasible {
        state: *s,
        block_size: action.block_size,
        allocation: action.allocation,
        rule: rule.to_string(),
    };
    if !s.is_consistent() {
        return Err(Error::InvariantViolation(format!("inconsistent state {s}")));
    }
    if cfg.allocation_index(action.allocation).is_none() {
        return Err(infeasible("allocation is not in the configured set"));
    }
    if action.block_size == 0 || s.total() + action.block_size > cfg.n_patients {
        return Err(infeasible(
            "block must be non-empty and fit within the remaining patients",
        ));
    }
    if !action.has_both_arms() {
        return Err(infeasible("rounded assignment leaves an arm empty"));
    }
    let (a, b) = (action.assigned_a(), action.assigned_b());
    let dist = BlockOutcomeDistribution::new(s, a, b, cfg);
    let mut out = Vec::with_capacity(((a + 1) * (b + 1)) as usize);
    for (ka, &pa) in dist.pmf_a.iter().enumerate() {
        for (kb, &pb) in dist.pmf_b.iter().enumerate() {
            let stratum = StratumTable {
                n_assigned_a: a,
                n_success_a: ka as u32,
                n_assigned_b: b,
                n_success_b: kb as u32,
            };
            out.push((pa * pb, *s + stratum));
        }
    }
    Ok(out)
}
