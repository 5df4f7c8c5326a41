//! Monte-Carlo evaluation of trial designs under known success rates.
//!
//! Each simulated trial draws from its own ChaCha8 stream, selected by the
//! trial index under the scenario seed, and per-trial results are reduced
//! in index order. Metrics are therefore identical for any thread count.

mod sweep;

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::solver::Policy;
use crate::state::{BlockAction, ContingencyState, StratumTable, TrialHistory};
use crate::stats::{cmh_rejects, normal_quantile, rar_probability, smoothed_rate};
use crate::utility::utility;

pub use sweep::{frontier_sweep, SweepRow};

pub const DEFAULT_SIMS: usize = 10_000;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_BURN_IN: f64 = 0.25;
/// Simulations per candidate `N` in [`calibrate_sample_size`].
pub const CALIBRATION_SIMS: usize = 20_000;

/// True success rates and simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub p_a: f64,
    pub p_b: f64,
    pub n_patients: u32,
    pub n_sims: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn new(p_a: f64, p_b: f64, n_patients: u32) -> Self {
        Scenario {
            p_a,
            p_b,
            n_patients,
            n_sims: DEFAULT_SIMS,
            alpha: DEFAULT_ALPHA,
            seed: 0,
        }
    }

    pub fn with_sims(mut self, n_sims: usize) -> Self {
        self.n_sims = n_sims;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_A", self.p_a), ("p_B", self.p_b)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidConfig(format!("{name}={p} must lie in (0, 1)")));
            }
        }
        if self.n_patients < 2 {
            return Err(Error::InvalidConfig(format!(
                "N={} must be at least 2",
                self.n_patients
            )));
        }
        if self.n_sims == 0 {
            return Err(Error::InvalidConfig("at least one simulation is required".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(Error::InvalidConfig(format!("alpha {} outside (0, 0.5]", self.alpha)));
        }
        Ok(())
    }
}

/// A randomization design.
#[derive(Debug, Clone)]
pub enum Design {
    /// One block with an exact `⌊N/2⌋ : ⌈N/2⌉` split.
    OneToOne,
    /// Per-patient randomization: probability 1/2 for the first
    /// `⌈burn_in·N⌉` patients, then the square-root rule on smoothed
    /// running estimates.
    Rar { burn_in: f64 },
    /// Two equal blocks: an exact 1:1 first block, then per-patient
    /// randomization at the square-root rule on first-block estimates.
    BlockedRar,
    /// The solved policy's action at every visited table.
    Mdp(Arc<Policy>),
}

impl Design {
    pub fn rar() -> Self {
        Design::Rar {
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Design::OneToOne => "onetoone",
            Design::Rar { .. } => "rar",
            Design::BlockedRar => "brar",
            Design::Mdp(_) => "mdp",
        }
    }

    /// Strata for the CMH test. Per-patient RAR would leave every stratum
    /// with a single arm, so it is pooled like the one-block design.
    fn strata(&self, h: &TrialHistory) -> Vec<StratumTable> {
        match self {
            Design::OneToOne | Design::Rar { .. } => vec![h.current() - ContingencyState::EMPTY],
            Design::BlockedRar | Design::Mdp(_) => h.strata(),
        }
    }
}

/// Summary of `n_sims` simulated trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub rejection_rate: f64,
    /// Mean estimated effect `p̂_A − p̂_B` minus the true effect.
    pub effect_bias: f64,
    /// Final `N_A − N_B`.
    pub alloc_diff_mean: f64,
    pub alloc_diff_p5: f64,
    pub alloc_diff_p95: f64,
    pub mean_blocks: f64,
    pub utility_mean: f64,
    pub utility_sd: f64,
}

#[derive(Debug, Clone, Copy)]
struct TrialSummary {
    rejected: bool,
    effect: f64,
    alloc_diff: i64,
    blocks: usize,
    utility: f64,
}

fn bernoulli_count<R: Rng + ?Sized>(n: u32, p: f64, rng: &mut R) -> u32 {
    if n == 0 {
        return 0;
    }
    Binomial::new(u64::from(n), p)
        .expect("p validated in (0, 1)")
        .sample(rng) as u32
}

fn block_outcome<R: Rng + ?Sized>(assigned_a: u32, assigned_b: u32, p_a: f64, p_b: f64, rng: &mut R) -> StratumTable {
    let sa = bernoulli_count(assigned_a, p_a, rng);
    let sb = bernoulli_count(assigned_b, p_b, rng);
    StratumTable::from_outcomes(sa, assigned_a - sa, sb, assigned_b - sb)
}

/// Square-root allocation from smoothed estimates of a table.
fn adaptive_probability(s: &ContingencyState) -> f64 {
    let pa = smoothed_rate(s.n_success_a, s.n_assigned_a, 1.0, 1.0);
    let pb = smoothed_rate(s.n_success_b, s.n_assigned_b, 1.0, 1.0);
    rar_probability(pa, pb).expect("smoothed estimates lie in (0, 1)")
}

/// Simulates one trial of `n_patients` under `design`.
pub fn simulate_trial<R: Rng + ?Sized>(
    design: &Design,
    p_a: f64,
    p_b: f64,
    n_patients: u32,
    rng: &mut R,
) -> Result<TrialHistory> {
    let mut h = TrialHistory::new();
    match design {
        Design::OneToOne => {
            let a = n_patients / 2;
            h.push(
                BlockAction::new(n_patients, 0.5),
                block_outcome(a, n_patients - a, p_a, p_b, rng),
            );
        }
        Design::Rar { burn_in } => {
            let burn = (burn_in * f64::from(n_patients)).ceil() as u32;
            for i in 0..n_patients {
                let xi = if i < burn {
                    0.5
                } else {
                    adaptive_probability(&h.current())
                };
                let to_a = rng.random_bool(xi);
                let stratum = if to_a {
                    block_outcome(1, 0, p_a, p_b, rng)
                } else {
                    block_outcome(0, 1, p_a, p_b, rng)
                };
                h.push(BlockAction::new(1, xi), stratum);
            }
        }
        Design::BlockedRar => {
            let first = n_patients / 2;
            let a = first / 2;
            h.push(BlockAction::new(first, 0.5), block_outcome(a, first - a, p_a, p_b, rng));
            let second = n_patients - first;
            let xi = adaptive_probability(&h.current());
            let to_a = bernoulli_count(second, xi, rng);
            h.push(
                BlockAction::new(second, xi),
                block_outcome(to_a, second - to_a, p_a, p_b, rng),
            );
        }
        Design::Mdp(policy) => {
            if policy.n_patients() != n_patients {
                return Err(Error::DesignPolicyMismatch(format!(
                    "policy is for N={} but the trial has N={n_patients}",
                    policy.n_patients()
                )));
            }
            while h.current().total() < n_patients {
                let s = h.current();
                let action = policy
                    .lookup_action(&s)
                    .map_err(|e| Error::DesignPolicyMismatch(e.to_string()))?;
                let stratum = block_outcome(action.assigned_a(), action.assigned_b(), p_a, p_b, rng);
                h.push(action, stratum);
            }
        }
    }
    Ok(h)
}

/// The random stream for trial `index` of a scenario seeded with `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn raw_or_smoothed(successes: u32, assigned: u32) -> f64 {
    if assigned == 0 {
        smoothed_rate(successes, assigned, 1.0, 1.0)
    } else {
        f64::from(successes) / f64::from(assigned)
    }
}

fn summarize_trial(design: &Design, h: &TrialHistory, critical: f64, cfg: &SolverConfig) -> Result<TrialSummary> {
    let s = h.current();
    Ok(TrialSummary {
        rejected: cmh_rejects(&design.strata(h), critical),
        effect: raw_or_smoothed(s.n_success_a, s.n_assigned_a) - raw_or_smoothed(s.n_success_b, s.n_assigned_b),
        alloc_diff: i64::from(s.n_assigned_a) - i64::from(s.n_assigned_b),
        blocks: h.num_blocks(),
        utility: utility(h, cfg)?,
    })
}

fn run_trials(design: &Design, scenario: &Scenario, cfg: &SolverConfig) -> Result<Vec<TrialSummary>> {
    scenario.validate()?;
    if cfg.n_patients != scenario.n_patients {
        return Err(Error::InvalidConfig(format!(
            "utility configuration has N={} but the scenario has N={}",
            cfg.n_patients, scenario.n_patients
        )));
    }
    if let Design::Mdp(p) = design {
        if p.n_patients() != scenario.n_patients {
            return Err(Error::DesignPolicyMismatch(format!(
                "policy is for N={} but the scenario has N={}",
                p.n_patients(),
                scenario.n_patients
            )));
        }
    }
    if let Design::Rar { burn_in } = design {
        if !(0.0..=1.0).contains(burn_in) {
            return Err(Error::InvalidConfig(format!(
                "burn-in fraction {burn_in} outside [0, 1]"
            )));
        }
    }
    let critical = normal_quantile(1.0 - scenario.alpha);
    (0..scenario.n_sims as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(scenario.seed, i);
            let h = simulate_trial(design, scenario.p_a, scenario.p_b, scenario.n_patients, &mut rng)?;
            summarize_trial(design, &h, critical, cfg)
        })
        .collect()
}

/// Nearest-rank percentile of an ascending sample.
fn nearest_rank(sorted: &[i64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1] as f64
}

fn mean_sd(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn metrics_of(trials: &[TrialSummary], scenario: &Scenario) -> ScenarioMetrics {
    let n = trials.len() as f64;
    let mut diffs: Vec<i64> = trials.iter().map(|t| t.alloc_diff).collect();
    diffs.sort_unstable();
    let (utility_mean, utility_sd) = mean_sd(trials.iter().map(|t| t.utility));
    ScenarioMetrics {
        rejection_rate: trials.iter().filter(|t| t.rejected).count() as f64 / n,
        effect_bias: trials.iter().map(|t| t.effect).sum::<f64>() / n - (scenario.p_a - scenario.p_b),
        alloc_diff_mean: diffs.iter().map(|&d| d as f64).sum::<f64>() / n,
        alloc_diff_p5: nearest_rank(&diffs, 0.05),
        alloc_diff_p95: nearest_rank(&diffs, 0.95),
        mean_blocks: trials.iter().map(|t| t.blocks as f64).sum::<f64>() / n,
        utility_mean,
        utility_sd,
    }
}

/// Simulates `scenario.n_sims` trials and summarizes them. Utility is
/// evaluated under `cfg`, whose `N` must match the scenario.
pub fn run_scenario(design: &Design, scenario: &Scenario, cfg: &SolverConfig) -> Result<ScenarioMetrics> {
    Ok(metrics_of(&run_trials(design, scenario, cfg)?, scenario))
}

/// Mean and standard deviation of the fraction of patients on arm A.
pub(crate) fn run_with_allocation(
    design: &Design,
    scenario: &Scenario,
    cfg: &SolverConfig,
) -> Result<(ScenarioMetrics, f64, f64)> {
    let trials = run_trials(design, scenario, cfg)?;
    let n = f64::from(scenario.n_patients);
    let (mean, sd) = mean_sd(trials.iter().map(|t| (t.alloc_diff as f64 / n + 1.0) / 2.0));
    Ok((metrics_of(&trials, scenario), mean, sd))
}

/// `(μ_a − μ_b) / √((σ_a² + σ_b²)/n)` for the utility of two designs.
pub fn utility_z(a: &ScenarioMetrics, b: &ScenarioMetrics, n_sims: usize) -> f64 {
    let diff = a.utility_mean - b.utility_mean;
    if diff == 0.0 {
        return 0.0;
    }
    diff / ((a.utility_sd.powi(2) + b.utility_sd.powi(2)) / n_sims as f64).sqrt()
}

/// Smallest even `N` at which the 1:1 design reaches `target_power` in
/// [`CALIBRATION_SIMS`] simulated trials: doubling, then bisection.
pub fn calibrate_sample_size(p_a: f64, p_b: f64, target_power: f64, alpha: f64, seed: u64) -> Result<u32> {
    // Written so that NaN rates are rejected too.
    if p_a.partial_cmp(&p_b) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::NoPower { p_a, p_b });
    }
    if target_power
        .partial_cmp(&1.0)
        .is_none_or(|o| o == std::cmp::Ordering::Greater)
    {
        return Err(Error::InvalidConfig(format!("target power {target_power} exceeds 1")));
    }
    const MAX_N: u32 = 1 << 20;
    let cfg_for = |n: u32| SolverConfig::new(n, 0.0, 0.0);
    let power = |n: u32| -> Result<f64> {
        let scenario = Scenario::new(p_a, p_b, n)
            .with_sims(CALIBRATION_SIMS)
            .with_alpha(alpha)
            .with_seed(seed);
        Ok(run_scenario(&Design::OneToOne, &scenario, &cfg_for(n))?.rejection_rate)
    };
    let mut hi = 2;
    while power(hi)? < target_power {
        if hi >= MAX_N {
            return Err(Error::InvalidConfig(format!(
                "power {target_power} not reached by N={MAX_N}"
            )));
        }
        hi *= 2;
    }
    if hi == 2 {
        return Ok(2);
    }
    let mut lo = hi / 2;
    while hi - lo > 2 {
        let mid = (lo + hi) / 2 / 2 * 2;
        if power(mid)? >= target_power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
