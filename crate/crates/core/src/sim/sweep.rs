use std::sync::Arc;

use serde::Serialize;

use crate::config::SolverConfig;
use crate::solver::{solve_with, SolveOptions};

use super::{run_with_allocation, Design, Scenario, ScenarioMetrics};

/// Two-sided 90% normal quantile.
const Z90: f64 = 1.644_853_626_951_472_2;

/// One (grid point, scenario) cell of a frontier sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub failure_weight: f64,
    pub block_cost: f64,
    pub scenario: Scenario,
    /// `None` when the grid point could not be solved or simulated.
    pub metrics: Option<ScenarioMetrics>,
    pub power_half_width: f64,
    /// Mean fraction of patients on arm A.
    pub alloc_a_mean: f64,
    pub alloc_a_half_width: f64,
    pub error: Option<String>,
}

/// Solves `base` at every `(λ_F, λ_K)` in the grid and simulates the
/// resulting policy on every scenario. A failing grid point yields rows
/// marked with the error instead of aborting the sweep.
pub fn frontier_sweep(
    base: &SolverConfig,
    failure_weights: &[f64],
    block_costs: &[f64],
    scenarios: &[Scenario],
    opts: &SolveOptions,
) -> Vec<SweepRow> {
    let mut rows = Vec::with_capacity(failure_weights.len() * block_costs.len() * scenarios.len());
    for &lf in failure_weights {
        for &lk in block_costs {
            let mut cfg = base.clone();
            cfg.failure_weight = lf;
            cfg.block_cost = lk;
            let policy = solve_with(&cfg, opts, |_| {}).map(Arc::new);
            for scenario in scenarios {
                let outcome = policy.as_ref().map_err(|e| e.to_string()).and_then(|p| {
                    run_with_allocation(&Design::Mdp(p.clone()), scenario, &cfg).map_err(|e| e.to_string())
                });
                rows.push(match outcome {
                    Ok((m, alloc_mean, alloc_sd)) => {
                        let n = scenario.n_sims as f64;
                        let p = m.rejection_rate;
                        SweepRow {
                            failure_weight: lf,
                            block_cost: lk,
                            scenario: *scenario,
                            metrics: Some(m),
                            power_half_width: Z90 * (p * (1.0 - p) / n).sqrt(),
                            alloc_a_mean: alloc_mean,
                            alloc_a_half_width: Z90 * alloc_sd / n.sqrt(),
                            error: None,
                        }
                    }
                    Err(e) => SweepRow {
                        failure_weight: lf,
                        block_cost: lk,
                        scenario: *scenario,
                        metrics: None,
                        power_half_width: f64::NAN,
                        alloc_a_mean: f64::NAN,
                        alloc_a_half_width: f64::NAN,
                        error: Some(e),
                    },
                });
            }
        }
    }
    rows
}
