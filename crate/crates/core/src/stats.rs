//! Estimators, the Beta-Binomial predictive distribution, the stratified CMH
//! test and the square-root response-adaptive randomization rule.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::state::StratumTable;

/// Posterior-mode style estimate `(successes + γ_1) / (assigned + γ_1 + γ_0)`.
pub fn map_estimate(successes: u32, assigned: u32, gamma_success: f64, gamma_failure: f64) -> Result<f64> {
    if successes > assigned {
        return Err(Error::InvalidStratum(format!(
            "{successes} successes out of {assigned} assigned"
        )));
    }
    if gamma_success < 0.0 || gamma_failure < 0.0 {
        return Err(Error::InvalidConfig("negative smoothing pseudo-count".into()));
    }
    let denom = f64::from(assigned) + gamma_success + gamma_failure;
    if denom <= 0.0 {
        return Err(Error::InvalidConfig(
            "estimate undefined: no observations and zero smoothing".into(),
        ));
    }
    Ok(smoothed_rate(successes, assigned, gamma_success, gamma_failure))
}

/// Unchecked form of [`map_estimate`] for inner loops.
#[inline]
pub(crate) fn smoothed_rate(successes: u32, assigned: u32, gamma_success: f64, gamma_failure: f64) -> f64 {
    (f64::from(successes) + gamma_success) / (f64::from(assigned) + gamma_success + gamma_failure)
}

/// Harmonic-mean stratum weight `N_A·N_B / (N_A + N_B)`.
pub fn harmonic_weight(assigned_a: u32, assigned_b: u32) -> Result<f64> {
    if assigned_a == 0 && assigned_b == 0 {
        return Err(Error::InvalidStratum("stratum has no patients".into()));
    }
    Ok(weight(assigned_a, assigned_b))
}

#[inline]
pub(crate) fn weight(assigned_a: u32, assigned_b: u32) -> f64 {
    let (a, b) = (f64::from(assigned_a), f64::from(assigned_b));
    a * b / (a + b)
}

/// Probability of assigning the next patient to arm A under the
/// square-root rule `√p̂_A / (√p̂_A + √p̂_B)`.
pub fn rar_probability(p_a: f64, p_b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_a) || !(0.0..=1.0).contains(&p_b) {
        return Err(Error::InvalidConfig(format!("estimates ({p_a}, {p_b}) outside [0, 1]")));
    }
    let (ra, rb) = (p_a.sqrt(), p_b.sqrt());
    if ra + rb == 0.0 {
        return Err(Error::InvalidConfig("both estimates are zero".into()));
    }
    Ok(ra / (ra + rb))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Beta-Binomial pmf over `0..=n` successes for a `Beta(alpha, beta)` prior,
/// evaluated through log-gamma.
///
/// `alpha` and `beta` must be positive.
pub fn beta_binomial_pmf(n: u32, alpha: f64, beta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    beta_binomial_pmf_into(n, alpha, beta, &mut out);
    out
}

pub(crate) fn beta_binomial_pmf_into(n: u32, alpha: f64, beta: f64, out: &mut Vec<f64>) {
    out.clear();
    let nf = f64::from(n);
    let shared =
        ln_gamma(nf + 1.0) + ln_gamma(alpha + beta) - ln_gamma(nf + alpha + beta) - ln_gamma(alpha) - ln_gamma(beta);
    for k in 0..=n {
        let kf = f64::from(k);
        let log_p =
            shared - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0) + ln_gamma(kf + alpha) + ln_gamma(nf - kf + beta);
        out.push(log_p.exp());
    }
}

/// Stratified CMH statistic `Σ w_i d_i / √(Σ w_i p̂_i q̂_i)` with raw
/// per-stratum rates.
///
/// Strata with an empty arm carry zero weight and are skipped. Returns
/// [`Error::DegenerateStatistic`] when the denominator is exactly zero and
/// [`Error::InvalidStratum`] when no stratum has both arms populated.
pub fn cmh_statistic(strata: &[StratumTable]) -> Result<f64> {
    let mut numer = 0.0;
    let mut denom = 0.0;
    let mut informative = false;
    for s in strata {
        if s.n_success_a > s.n_assigned_a || s.n_success_b > s.n_assigned_b {
            return Err(Error::InvalidStratum(format!("{s:?}")));
        }
        if s.n_assigned_a == 0 || s.n_assigned_b == 0 {
            continue;
        }
        informative = true;
        let (na, nb) = (f64::from(s.n_assigned_a), f64::from(s.n_assigned_b));
        let w = weight(s.n_assigned_a, s.n_assigned_b);
        let d = f64::from(s.n_success_a) / na - f64::from(s.n_success_b) / nb;
        let pooled = f64::from(s.n_success_a + s.n_success_b) / (na + nb);
        numer += w * d;
        denom += w * pooled * (1.0 - pooled);
    }
    if !informative {
        return Err(Error::InvalidStratum("no stratum has patients in both arms".into()));
    }
    if denom == 0.0 {
        return Err(Error::DegenerateStatistic);
    }
    Ok(numer / denom.sqrt())
}

/// One-sided CMH test of `p_A > p_B` at level `alpha`.
///
/// An undefined statistic never rejects.
pub fn cmh_test_one_sided(strata: &[StratumTable], alpha: f64) -> Result<bool> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside (0, 0.5]")));
    }
    Ok(cmh_rejects(strata, normal_quantile(1.0 - alpha)))
}

/// [`cmh_test_one_sided`] against a precomputed critical value.
pub fn cmh_rejects(strata: &[StratumTable], critical: f64) -> bool {
    matches!(cmh_statistic(strata), Ok(z) if z >= critical)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn map_estimate_examples() {
        assert_eq!(map_estimate(25, 50, 1.0, 1.0).unwrap(), 0.5);
        assert_eq!(map_estimate(0, 0, 1.0, 1.0).unwrap(), 0.5);
        assert!((map_estimate(10, 40, 1.0, 1.0).unwrap() - 11.0 / 42.0).abs() < 1e-15);
        assert!((map_estimate(10, 40, 1.0, 1.0).unwrap() - 0.261_904_761_9).abs() < 1e-9);
        assert!(map_estimate(0, 0, 0.0, 0.0).is_err());
        assert_eq!(map_estimate(3, 4, 0.0, 0.0).unwrap(), 0.75);
        assert!(map_estimate(5, 4, 1.0, 1.0).is_err());
    }

    #[test]
    fn harmonic_weight_examples() {
        assert_eq!(harmonic_weight(50, 50).unwrap(), 25.0);
        assert!((harmonic_weight(42, 18).unwrap() - 12.6).abs() < 1e-12);
        assert_eq!(harmonic_weight(0, 10).unwrap(), 0.0);
        assert!(harmonic_weight(0, 0).is_err());
    }

    #[test]
    fn rar_rule_examples() {
        assert_eq!(rar_probability(0.5, 0.5).unwrap(), 0.5);
        assert!((rar_probability(0.9, 0.1).unwrap() - 0.75).abs() < 1e-12);
        assert!(rar_probability(0.0, 0.0).is_err());
        let mut prev = 0.0;
        for i in 1..100 {
            let v = rar_probability(f64::from(i) / 100.0, 0.3).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn normal_quantile_matches_reference() {
        assert!((normal_quantile(0.95) - 1.644_853_627_0).abs() < 1e-9);
        assert!((normal_quantile(0.975) - 1.959_963_984_5).abs() < 1e-9);
        assert!(normal_quantile(0.5).abs() < 1e-12);
    }

    #[test]
    fn beta_binomial_examples() {
        // C(n,k) B(k+α, n−k+β) / B(α, β) with α = β = 2
        let pmf = beta_binomial_pmf(2, 2.0, 2.0);
        assert!((pmf[0] - 0.3).abs() < 1e-12);
        assert!((pmf[1] - 0.4).abs() < 1e-12);
        assert!((pmf[2] - 0.3).abs() < 1e-12);
        let pmf = beta_binomial_pmf(1, 2.0, 1.0);
        assert!((pmf[1] - 2.0 / 3.0).abs() < 1e-12);
        let pmf = beta_binomial_pmf(1, 1.0, 1.0);
        assert!((pmf[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn cmh_examples() {
        let s = StratumTable::new(50, 30, 50, 20).unwrap();
        assert!((cmh_statistic(&[s]).unwrap() - 2.0).abs() < 1e-12);
        assert!(cmh_test_one_sided(&[s], 0.05).unwrap());

        let even = [
            StratumTable::new(10, 3, 20, 6).unwrap(),
            StratumTable::new(4, 2, 8, 4).unwrap(),
        ];
        assert_eq!(cmh_statistic(&even).unwrap(), 0.0);
        assert!(!cmh_test_one_sided(&even, 0.05).unwrap());

        let all_success = [StratumTable::new(5, 5, 5, 5).unwrap()];
        assert!(matches!(cmh_statistic(&all_success), Err(Error::DegenerateStatistic)));
        assert!(!cmh_test_one_sided(&all_success, 0.05).unwrap());

        let one_arm = [StratumTable::new(3, 1, 0, 0).unwrap()];
        assert!(matches!(cmh_statistic(&one_arm), Err(Error::InvalidStratum(_))));
        assert!(!cmh_test_one_sided(&one_arm, 0.05).unwrap());

        assert!(cmh_test_one_sided(&[s], 0.0).is_err());
        assert!(cmh_test_one_sided(&[s], 0.6).is_err());
    }

    #[test]
    fn cmh_skips_strata_with_an_empty_arm() {
        let s = StratumTable::new(50, 30, 50, 20).unwrap();
        let empty_b = StratumTable::new(7, 7, 0, 0).unwrap();
        assert_eq!(cmh_statistic(&[s, empty_b]).unwrap(), cmh_statistic(&[s]).unwrap());
    }

    fn stratum() -> impl Strategy<Value = StratumTable> {
        (1u32..30, 1u32..30)
            .prop_flat_map(|(na, nb)| (Just(na), 0..=na, Just(nb), 0..=nb))
            .prop_map(|(na, sa, nb, sb)| StratumTable::new(na, sa, nb, sb).unwrap())
    }

    proptest! {
        #[test]
        fn cmh_is_antisymmetric(strata in prop::collection::vec(stratum(), 1..6)) {
            let swapped: Vec<_> = strata.iter().map(StratumTable::swapped).collect();
            match (cmh_statistic(&strata), cmh_statistic(&swapped)) {
                (Ok(z), Ok(zs)) => prop_assert!((z + zs).abs() < 1e-12),
                (Err(Error::DegenerateStatistic), Err(Error::DegenerateStatistic)) => {}
                other => prop_assert!(false, "inconsistent outcomes {other:?}"),
            }
        }

        #[test]
        fn equal_proportions_give_zero(
            parts in prop::collection::vec((1u32..10, 0u32..=4, 1u32..4, 1u32..4), 1..5)
        ) {
            // Stratum with rate k/4 in both arms: N_A = 4a, N_B = 4b.
            let strata: Vec<_> = parts
                .iter()
                .map(|&(_, k, a, b)| StratumTable::new(4 * a, k * a, 4 * b, k * b).unwrap())
                .collect();
            match cmh_statistic(&strata) {
                Ok(z) => prop_assert!(z.abs() < 1e-12),
                Err(Error::DegenerateStatistic) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn estimates_stay_inside_unit_interval(
            assigned in 0u32..500, frac in 0.0f64..=1.0, g1 in 0.01f64..5.0, g0 in 0.01f64..5.0
        ) {
            let successes = (f64::from(assigned) * frac).floor() as u32;
            let p = map_estimate(successes, assigned, g1, g0).unwrap();
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}
