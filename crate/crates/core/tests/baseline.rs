//! Promised-utility baseline checks: the full-information contract ties
//! back to the weight mechanism's allocation, the incentive-constrained
//! value function has the right shape and convergence rate, and simulated
//! promises drift down — the immiseration contrast.

mod common;

use common::config;
use lambda_mutual_core::baseline::{baseline_simulate, baseline_solve, BaselineOptions};
use lambda_mutual_core::economy::{DeviationScaling, IncomeDistribution};
use lambda_mutual_core::utility::UtilitySpec;

fn setup() -> (
    UtilitySpec<f64>,
    lambda_mutual_core::economy::MechanismConfig<f64>,
    IncomeDistribution<f64>,
) {
    (
        UtilitySpec::log(),
        config(0.9, 1.0, DeviationScaling::Definition),
        IncomeDistribution::uniform(vec![0.5, 1.5]).unwrap(),
    )
}

fn options(ic: bool) -> BaselineOptions {
    BaselineOptions {
        ic_enabled: ic,
        max_sweeps: 5000,
    }
}

#[test]
fn full_information_replicates_first_best() {
    let (spec, cfg, dist) = setup();
    let model = baseline_solve(&spec, &cfg, &dist, 120, 1e-9, options(false)).unwrap();

    for (iw, &w) in model.grid().iter().enumerate() {
        let policy = model.policy_at(iw).expect("full info is feasible everywhere");
        // Continuation promise is the state itself and consumption is
        // constant across income states.
        for state in &policy.per_state {
            assert_eq!(state.next_promise, w);
        }
        let c_low = dist.income(0) + policy.per_state[0].transfer;
        let c_high = dist.income(1) + policy.per_state[1].transfer;
        assert!((c_low - c_high).abs() <= 1e-12 * c_low.abs().max(1.0));

        // Ties back to the weight mechanism: consumption at promise w equals
        // full-insurance consumption at the weight delivering value w,
        // within grid resolution.
        let lambda = spec.weight_for_value(w).unwrap();
        let c_star = spec.full_insurance_consumption(lambda).unwrap();
        assert!(
            (c_low - c_star).abs() <= c_star * model.spacing(),
            "node {iw}: c {c_low} vs c* {c_star}"
        );
    }

    // Simulated promises never move.
    let stats = baseline_simulate(&model, &spec, &cfg, &dist, 0.0, 500, 30, 9).unwrap();
    for p in &stats.periods {
        assert_eq!(p.mean_w, 0.0);
        assert_eq!(p.var_w, 0.0);
        assert_eq!(p.censored_count, 0);
    }
}

#[test]
fn constrained_value_is_decreasing_and_concave() {
    let (spec, cfg, dist) = setup();
    let coarse = baseline_solve(&spec, &cfg, &dist, 60, 1e-9, options(true)).unwrap();
    let values = coarse.values();
    for pair in values.windows(2) {
        assert!(pair[1] < pair[0], "P must be strictly decreasing");
    }
    // Concavity holds up to the discrete-choice quantization wiggle, whose
    // scale is Δw² — the same order as the curvature signal P''Δw² itself.
    // (The acceptance suite asserts strict concavity at the production grid
    // size of 200, where the quantization resolves.)
    let wiggle = coarse.spacing() * coarse.spacing();
    for triple in values.windows(3) {
        let second = triple[2] - 2.0 * triple[1] + triple[0];
        assert!(
            second <= wiggle,
            "P concavity broken beyond quantization: second difference {second}"
        );
    }

    // Refinement oracle: doubling the grid (node-aligned) moves the values
    // by less than two coarse grid spacings.
    let fine = baseline_solve(&spec, &cfg, &dist, 119, 1e-9, options(true)).unwrap();
    let bound = 2.0 * coarse.spacing();
    for (i, &v) in values.iter().enumerate() {
        let gap = (fine.values()[2 * i] - v).abs();
        assert!(gap <= bound, "node {i}: refinement moved P by {gap} > {bound}");
    }
}

#[test]
fn value_iteration_contracts_at_rate_beta() {
    let (spec, cfg, dist) = setup();
    let model = baseline_solve(&spec, &cfg, &dist, 60, 1e-10, options(true)).unwrap();
    let residuals = model.residuals();
    assert!(residuals.len() > 30);
    // Fit the tail decay: successive residual ratios settle at β.
    let mut ratios: Vec<f64> = residuals
        .windows(2)
        .rev()
        .take(20)
        .filter(|w| w[0] > 0.0 && w[1] > 0.0)
        .map(|w| w[1] / w[0])
        .collect();
    assert!(ratios.len() >= 10);
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = ratios[ratios.len() / 2];
    assert!(
        (median - 0.9).abs() <= 0.02,
        "residual decay rate {median} should be ~beta"
    );
}

#[test]
fn constrained_promises_drift_down() {
    let (spec, cfg, dist) = setup();
    let model = baseline_solve(&spec, &cfg, &dist, 120, 1e-8, options(true)).unwrap();
    let stats = baseline_simulate(&model, &spec, &cfg, &dist, 0.0, 200_000, 30, 31).unwrap();

    assert_eq!(stats.periods[0].mean_w, 0.0);
    assert_eq!(stats.periods[0].var_w, 0.0);
    let means: Vec<f64> = stats.periods.iter().map(|p| p.mean_w).collect();
    let strict = means.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(
        strict * 10 >= means.windows(2).count() * 9,
        "promises should fall in >=90% of periods, got {strict}/{}",
        means.windows(2).count()
    );
    assert!(
        means.last().unwrap() < &-1e-3,
        "cumulative drift should be visible, got {}",
        means.last().unwrap()
    );

    // Promise keeping along the simulated paths holds to grid resolution;
    // the grid spacing is already tighter than spacing times the local
    // Lipschitz bound of u (1/min consumption > 1 here).
    assert!(
        stats.max_promise_residual <= model.spacing(),
        "promise keeping residual {} above grid tolerance {}",
        stats.max_promise_residual,
        model.spacing()
    );
    assert_eq!(stats.clamped_count, 0);
}
