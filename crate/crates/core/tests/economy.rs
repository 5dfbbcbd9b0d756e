//! Economy checks: the closed-form firm values against truncated series,
//! deviation conventions against their defining difference, and the income
//! sampler's distributional behavior.

mod common;

use common::{both_scalings, config, firm_value_series};
use lambda_mutual_core::economy::{
    deviation, deviation_at, firm_value, firm_value_mean, sample_income, transfer,
    DeviationScaling, IncomeDistribution, IncomeStreams,
};
use lambda_mutual_core::scalar::compensated_sum;
use lambda_mutual_core::utility::UtilitySpec;

#[test]
fn firm_value_examples_match_series_oracle() {
    let log = UtilitySpec::<f64>::log();
    let dist = IncomeDistribution::uniform(vec![0.5, 1.5]).unwrap();
    let cases = [
        (1.0, 0.5, -0.05),
        (1.0, 1.5, 0.05),
        (2.0, 0.5, -1.05),
    ];
    for (lambda, e0, expected) in cases {
        let cfg = config(0.9, lambda, DeviationScaling::Definition);
        let closed = firm_value(&log, &cfg, &dist, lambda, e0).unwrap();
        assert!(
            (closed - expected).abs() <= 1e-15,
            "closed form {closed} vs frozen {expected}"
        );
        let c_star = log.full_insurance_consumption(lambda).unwrap();
        let series = firm_value_series(c_star, dist.mean(), 0.9, e0, 500);
        assert!((closed - series).abs() <= 1e-12 + 0.9f64.powi(500) * 2.0);
    }
}

#[test]
fn firm_value_matches_series_on_grid() {
    for spec in common::family_grid() {
        for dist in common::dist_grid() {
            for &beta in &common::beta_grid() {
                for &lambda in &common::lambda_grid() {
                    let cfg = config(beta, lambda, DeviationScaling::Definition);
                    let c_star = spec.full_insurance_consumption(lambda).unwrap();
                    let max_transfer = dist
                        .support()
                        .iter()
                        .map(|&e| (c_star - e).abs())
                        .fold(0.0, f64::max);
                    let bound = 1e-12 + beta.powi(500) * max_transfer;
                    for &e0 in dist.support() {
                        let closed = firm_value(&spec, &cfg, &dist, lambda, e0).unwrap();
                        let series = firm_value_series(c_star, dist.mean(), beta, e0, 500);
                        assert!(
                            (closed - series).abs() <= bound,
                            "{spec:?} β={beta} λ={lambda} e0={e0}: {closed} vs {series}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn firm_value_mean_examples() {
    let log = UtilitySpec::<f64>::log();
    let dist = IncomeDistribution::uniform(vec![0.5, 1.5]).unwrap();
    let cfg = config(0.9, 1.0, DeviationScaling::Definition);
    assert_eq!(firm_value_mean(&log, &cfg, &dist, 1.0).unwrap(), 0.0);
    assert_eq!(firm_value_mean(&log, &cfg, &dist, 2.0).unwrap(), -1.0);

    let crra = UtilitySpec::crra(2.0f64).unwrap();
    let dist13 = IncomeDistribution::uniform(vec![1.0, 3.0]).unwrap();
    assert_eq!(firm_value_mean(&crra, &cfg, &dist13, 4.0).unwrap(), 0.0);

    // Oracle: probability-weighted average of the per-state values.
    for &lambda in &common::lambda_grid() {
        let weighted = compensated_sum(dist.support().iter().zip(dist.probs()).map(
            |(&e0, &p)| p * firm_value(&log, &cfg, &dist, lambda, e0).unwrap(),
        ));
        let mean = firm_value_mean(&log, &cfg, &dist, lambda).unwrap();
        assert!((weighted - mean).abs() <= 1e-14);
    }
}

#[test]
fn deviation_examples_and_difference_oracle() {
    let dist = IncomeDistribution::uniform(vec![0.5, 1.5]).unwrap();
    let cfg_def = config(0.9, 1.0, DeviationScaling::Definition);
    let cfg_p1 = config(0.9, 1.0, DeviationScaling::Prop1);

    let d = deviation(&cfg_def, &dist, 1.5).unwrap();
    assert!((d - 0.05).abs() <= 1e-15);
    assert_eq!(deviation(&cfg_p1, &dist, 1.5).unwrap(), 0.5);

    // Oracle: v₂(λ, e) − v̄₂(λ), which must also be independent of λ.
    let log = UtilitySpec::<f64>::log();
    for &lambda in &common::lambda_grid() {
        let diff = firm_value(&log, &cfg_def, &dist, lambda, 1.5).unwrap()
            - firm_value_mean(&log, &cfg_def, &dist, lambda).unwrap();
        assert!(
            (diff - d).abs() <= 1e-12,
            "defining difference {diff} drifted from deviation {d} at λ = {lambda}"
        );
    }

    // Mean income with ē in the support has zero deviation.
    let with_mean = IncomeDistribution::uniform(vec![0.5, 1.0, 1.5]).unwrap();
    for cfg in [&cfg_def, &cfg_p1] {
        assert_eq!(deviation(cfg, &with_mean, 1.0).unwrap(), 0.0);
    }
}

#[test]
fn deviations_are_mean_zero() {
    for dist in common::dist_grid() {
        for &beta in &common::beta_grid() {
            for scaling in both_scalings() {
                let cfg = config(beta, 1.0, scaling);
                let mean = compensated_sum(
                    (0..dist.len()).map(|i| dist.prob(i) * deviation_at(&cfg, &dist, i)),
                );
                assert!(
                    mean.abs() <= 1e-12,
                    "{scaling:?} β={beta}: mean deviation {mean}"
                );
            }
        }
    }
}

#[test]
fn full_insurance_identity_is_bitwise_on_grid() {
    for spec in common::family_grid() {
        for dist in common::dist_grid() {
            for &lambda in &common::lambda_grid() {
                let c_star = spec.full_insurance_consumption(lambda).unwrap();
                for &e in dist.support() {
                    let tau = transfer(&spec, lambda, e).unwrap();
                    assert_eq!(
                        e + tau,
                        c_star,
                        "{spec:?} λ={lambda} e={e}: consumption must rebuild c* exactly"
                    );
                }
            }
        }
    }
}

#[test]
fn sampler_frequency_matches_pmf() {
    let dist = IncomeDistribution::new(vec![0.5, 1.5], vec![0.3, 0.7]).unwrap();
    let streams = IncomeStreams::new(20240901);
    let mut stream = streams.agent(0);
    let n = 1_000_000u32;
    let mut low = 0u32;
    for _ in 0..n {
        if sample_income(&dist, &mut stream) == 0.5 {
            low += 1;
        }
    }
    let freq = low as f64 / n as f64;
    // ±0.002 is ~4.4 binomial standard errors at p = 0.3.
    assert!(
        (freq - 0.3).abs() <= 0.002,
        "frequency {freq} of the low state strayed from 0.3"
    );
}
