//! Independent oracles shared by the integration tests. Everything here
//! deliberately avoids the library's analytic inverses and closed forms:
//! inverses are recovered by bisection, discounted values by truncated
//! series, and linear fixed points by Gaussian elimination.

#![allow(dead_code)]

use lambda_mutual_core::economy::{DeviationScaling, IncomeDistribution, MechanismConfig};
use lambda_mutual_core::utility::UtilitySpec;

/// Bisection solve of an increasing function on [lo, hi] to ~1e-14 relative.
pub fn bisect_increasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, target: f64) -> f64 {
    assert!(
        f(lo) <= target && target <= f(hi),
        "oracle bracket must contain the target"
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Central finite difference of `f` at `x`.
pub fn fd_derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Truncated-series evaluation of the firm's normalized contract value:
/// (1-β) Σ_{t<=horizon} β^t E₀[-τ(λ, e_t)] with exact conditional
/// expectations for i.i.d. shocks (date 0 income given, later dates at the
/// mean).
pub fn firm_value_series(
    c_star: f64,
    mean_income: f64,
    beta: f64,
    e0: f64,
    horizon: usize,
) -> f64 {
    let mut total = e0 - c_star; // t = 0 term, -τ = e - c
    let mut discount = 1.0;
    for _ in 1..=horizon {
        discount *= beta;
        total += discount * (mean_income - c_star);
    }
    (1.0 - beta) * total
}

/// Direct linear solve of (I − L) x = b by Gaussian elimination with partial
/// pivoting; the independent route against the Neumann iteration.
pub fn solve_fixed_point_direct(dim: usize, operator: &[f64], offset: &[f64]) -> Vec<f64> {
    let mut a = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            a[i * dim + j] = (if i == j { 1.0 } else { 0.0 }) - operator[i * dim + j];
        }
    }
    let mut b = offset.to_vec();
    for col in 0..dim {
        let pivot = (col..dim)
            .max_by(|&r, &s| {
                a[r * dim + col]
                    .abs()
                    .partial_cmp(&a[s * dim + col].abs())
                    .unwrap()
            })
            .unwrap();
        if pivot != col {
            for j in 0..dim {
                a.swap(col * dim + j, pivot * dim + j);
            }
            b.swap(col, pivot);
        }
        assert!(a[col * dim + col].abs() > 1e-14, "oracle matrix is singular");
        for row in col + 1..dim {
            let factor = a[row * dim + col] / a[col * dim + col];
            for j in col..dim {
                a[row * dim + j] -= factor * a[col * dim + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; dim];
    for row in (0..dim).rev() {
        let mut acc = b[row];
        for j in row + 1..dim {
            acc -= a[row * dim + j] * x[j];
        }
        x[row] = acc / a[row * dim + row];
    }
    x
}

/// Canonical verification grid: weights, discounts, families, and supports.
pub fn lambda_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0]
}

pub fn beta_grid() -> Vec<f64> {
    vec![0.5, 0.9, 0.99]
}

/// Log plus the two CRRA curvatures used across the mechanism checks.
pub fn family_grid() -> Vec<UtilitySpec<f64>> {
    vec![
        UtilitySpec::log(),
        UtilitySpec::crra(0.5f64).unwrap(),
        UtilitySpec::crra(2.0f64).unwrap(),
    ]
}

/// Uniform supports with M = 2 and M = 5 states, both with mean 1.
pub fn dist_grid() -> Vec<IncomeDistribution<f64>> {
    vec![
        IncomeDistribution::uniform(vec![0.5, 1.5]).unwrap(),
        IncomeDistribution::uniform(vec![0.5, 0.75, 1.0, 1.25, 1.5]).unwrap(),
    ]
}

pub fn both_scalings() -> Vec<DeviationScaling> {
    vec![DeviationScaling::Definition, DeviationScaling::Prop1]
}

pub fn config(beta: f64, lambda0: f64, scaling: DeviationScaling) -> MechanismConfig<f64> {
    MechanismConfig::new(beta, lambda0, scaling).unwrap()
}
