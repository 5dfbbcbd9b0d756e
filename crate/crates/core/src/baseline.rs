//! Promised-utility recursive contract, solved by value iteration on a grid.
//!
//! This is the contrast model: the state is the utility `w` promised to the
//! individual, and the firm chooses report-contingent transfers and
//! continuation promises subject to promise keeping and truth telling. Two
//! income states keep the inner maximization tractable and are enough to
//! exhibit the downward drift of promised utilities that the weight
//! mechanism avoids.
//!
//! With incentives active, a candidate fixes the continuation pair
//! (w'₁, w'₂); the high state's truth-telling constraint binds at the
//! optimum, so current consumption is recovered from
//!
//! ```text
//! p₁ u(c₁) + p₂ u(c₁ + e₂ − e₁) = (w − β w'₁) / (1 − β)
//! ```
//!
//! (promise keeping with the high type indifferent to claiming the low
//! state), after which the high state's own consumption follows from its
//! delivered value and w'₂. The low type's constraint is verified on every
//! candidate. With incentives disabled the candidate is a common
//! continuation w' with consumption constant across states — the
//! full-information contract.
//!
//! Value iteration sweeps search (w'₁, w'₂) over the grid nodes; converged
//! policies are then refined to continuous promises by solving the
//! first-order conditions of the inner problem against a derivative field
//! P'(w) obtained from the envelope identity at each node and made
//! self-consistent by iterating refinement and envelope updates. The
//! refinement matters: the immiseration drift is second order in the
//! contract's spread, so node-quantized promises round it to exactly zero
//! near the start of a simulation, and chord slopes of the node values are
//! too coarse to place promises at sub-drift accuracy. Simulated paths
//! carry a continuous promise and interpolate the per-node policies, which
//! keeps promise-keeping honest to within grid resolution (the residual is
//! measured and reported per run).

use rayon::prelude::*;

use crate::economy::{sample_state, IncomeDistribution, IncomeStreams, MechanismConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::utility::UtilitySpec;

/// Consumption floor defining the lower grid bound u(ε).
const GRID_CONSUMPTION_FLOOR: f64 = 1e-3;

/// Options for [`baseline_solve`].
#[derive(Debug, Clone, Copy)]
pub struct BaselineOptions {
    /// Enforce truth telling. Disabling it yields the full-information
    /// contract.
    pub ic_enabled: bool,
    /// Value-iteration sweep budget.
    pub max_sweeps: usize,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            ic_enabled: true,
            max_sweeps: 5000,
        }
    }
}

/// Transfer and continuation promise for one income state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatePolicy<F> {
    pub transfer: F,
    /// Continuation promise; continuous-valued, not restricted to the grid.
    pub next_promise: F,
    /// Value delivered to the individual in this state:
    /// (1-β) u(e + transfer) + β w'.
    pub delivered: F,
}

/// Optimal candidate at one grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPolicy<F> {
    pub per_state: Vec<StatePolicy<F>>,
}

/// Solved promised-utility model.
#[derive(Debug, Clone)]
pub struct BaselineModel<F> {
    grid: Vec<F>,
    value: Vec<F>,
    policy: Vec<Option<GridPolicy<F>>>,
    residuals: Vec<F>,
    ic_enabled: bool,
}

impl<F: Scalar> BaselineModel<F> {
    pub fn grid(&self) -> &[F] {
        &self.grid
    }

    /// Firm value P(w) per grid node; −∞ marks infeasible nodes.
    pub fn values(&self) -> &[F] {
        &self.value
    }

    pub fn policy_at(&self, index: usize) -> Option<&GridPolicy<F>> {
        self.policy[index].as_ref()
    }

    /// Sup-norm change per sweep, in order.
    pub fn residuals(&self) -> &[F] {
        &self.residuals
    }

    pub fn sweeps(&self) -> usize {
        self.residuals.len()
    }

    pub fn ic_enabled(&self) -> bool {
        self.ic_enabled
    }

    pub fn spacing(&self) -> F {
        self.grid[1] - self.grid[0]
    }

    pub fn nearest_index(&self, w: F) -> usize {
        let i = ((w - self.grid[0]) / self.spacing()).round().lossy().max(0.0) as usize;
        i.min(self.grid.len() - 1)
    }

    /// P at an arbitrary promise by linear interpolation between nodes.
    pub fn interpolate_value(&self, w: F) -> F {
        let n = self.grid.len();
        if w <= self.grid[0] {
            return self.value[0];
        }
        if w >= self.grid[n - 1] {
            return self.value[n - 1];
        }
        let i = (((w - self.grid[0]) / self.spacing()).lossy().floor() as usize).min(n - 2);
        let frac = (w - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        self.value[i] + frac * (self.value[i + 1] - self.value[i])
    }

    /// Per-state (transfer, continuation promise) at an arbitrary promise,
    /// linearly interpolated between the bracketing nodes. `None` when a
    /// bracketing node has no policy.
    pub fn interpolate_policy(&self, w: F) -> Option<Vec<(F, F)>> {
        let n = self.grid.len();
        let clamped = w.max(self.grid[0]).min(self.grid[n - 1]);
        let i = (((clamped - self.grid[0]) / self.spacing()).lossy().floor() as usize)
            .min(n - 2);
        let frac = ((clamped - self.grid[i]) / (self.grid[i + 1] - self.grid[i]))
            .max(F::zero())
            .min(F::one());
        let lo = self.policy[i].as_ref()?;
        let hi = self.policy[i + 1].as_ref()?;
        Some(
            lo.per_state
                .iter()
                .zip(&hi.per_state)
                .map(|(a, b)| {
                    (
                        a.transfer + frac * (b.transfer - a.transfer),
                        a.next_promise + frac * (b.next_promise - a.next_promise),
                    )
                })
                .collect(),
        )
    }
}

/// Solves p₁ u(c) + p₂ u(c + de) = target for c > 0 by bisection.
fn solve_low_consumption<F: Scalar>(
    spec: &UtilitySpec<F>,
    p1: F,
    p2: F,
    de: F,
    target: F,
) -> Option<F> {
    let g = |c: F| -> Option<F> {
        let a = spec.eval(c).ok()?.utility;
        let b = spec.eval(c + de).ok()?.utility;
        Some(p1 * a + p2 * b - target)
    };

    let mut lo = F::of(GRID_CONSUMPTION_FLOOR);
    let mut g_lo = g(lo)?;
    let mut shrink = 0;
    while g_lo > F::zero() {
        lo = lo * F::of(1e-6);
        if lo < F::min_positive_value() {
            return None; // target below the reachable range
        }
        g_lo = g(lo)?;
        shrink += 1;
        if shrink > 60 {
            return None;
        }
    }
    if g_lo == F::zero() {
        return Some(lo);
    }

    let mut hi = (de + F::one()).max(F::one());
    let mut grow = 0;
    while g(hi)? < F::zero() {
        hi = hi * F::of(2.0);
        grow += 1;
        if grow > 1000 || !hi.is_finite() {
            return None; // target above the reachable range
        }
    }

    for _ in 0..200 {
        let mid = (lo + hi) * F::of(0.5);
        if g(mid)? < F::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= F::epsilon() * hi.abs().max(F::one()) {
            break;
        }
    }
    Some((lo + hi) * F::of(0.5))
}

/// Everything fixed while optimizing one node: the environment plus the
/// current value table for interpolated lookups.
struct NodeContext<'a, F> {
    spec: &'a UtilitySpec<F>,
    beta: F,
    p1: F,
    p2: F,
    e1: F,
    e2: F,
    de: F,
    mean: F,
    grid: &'a [F],
    value: &'a [F],
    ic_tol: F,
}

impl<F: Scalar> NodeContext<'_, F> {
    fn one_minus_beta(&self) -> F {
        F::one() - self.beta
    }

    fn interp_value(&self, w: F) -> F {
        let n = self.grid.len();
        if w <= self.grid[0] {
            return self.value[0];
        }
        if w >= self.grid[n - 1] {
            return self.value[n - 1];
        }
        let step = self.grid[1] - self.grid[0];
        let i = (((w - self.grid[0]) / step).lossy().floor() as usize).min(n - 2);
        let frac = (w - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        self.value[i] + frac * (self.value[i + 1] - self.value[i])
    }

    /// Low-report branch under the binding high-state constraint.
    fn binding_branch(&self, w: F, w1: F) -> Option<BindingBranch<F>> {
        let omb = self.one_minus_beta();
        let target = (w - self.beta * w1) / omb;
        let c1 = solve_low_consumption(self.spec, self.p1, self.p2, self.de, target)?;
        let u1 = self.spec.eval(c1).ok()?.utility;
        let u2 = self.spec.eval(c1 + self.de).ok()?.utility;
        Some(BindingBranch {
            tau1: c1 - self.e1,
            delivered1: omb * u1 + self.beta * w1,
            delivered2: omb * u2 + self.beta * w1,
        })
    }

    /// High-state consumption, transfer, and low-type mimic admissibility
    /// for a candidate continuation w2, given the delivered value υ₂.
    fn high_state(&self, branch: &BindingBranch<F>, w2: F) -> Option<(F, F)> {
        let omb = self.one_minus_beta();
        let h2 = (branch.delivered2 - self.beta * w2) / omb;
        let c2 = self.spec.inverse(h2).ok()?;
        if !(c2.is_finite() && c2 > F::zero()) {
            return None;
        }
        let mimic_c = c2 - self.de;
        let mimic_u = if mimic_c > F::zero() {
            self.spec.eval(mimic_c).ok()?.utility
        } else {
            match self.spec.utility_at_zero_consumption() {
                Some(u0) => u0,
                None => F::neg_infinity(),
            }
        };
        if omb * mimic_u + self.beta * w2 > branch.delivered1 + self.ic_tol {
            return None; // low type would claim the high state
        }
        Some((c2, c2 - self.e2))
    }

    /// Objective given the low branch and a high-state continuation.
    fn objective(&self, branch: &BindingBranch<F>, w1: F, w2: F) -> Option<F> {
        let (_, tau2) = self.high_state(branch, w2)?;
        let omb = self.one_minus_beta();
        let value = self.p1 * (-omb * branch.tau1 + self.beta * self.interp_value(w1))
            + self.p2 * (-omb * tau2 + self.beta * self.interp_value(w2));
        value.is_finite().then_some(value)
    }

    /// Pooled marginal utility of the low branch and u'(c₁ + de).
    fn branch_marginals(&self, branch: &BindingBranch<F>) -> Option<(F, F)> {
        let c1 = self.e1 + branch.tau1;
        let m_low = self.spec.eval(c1).ok()?.marginal;
        let m_high = self.spec.eval(c1 + self.de).ok()?.marginal;
        Some((self.p1 * m_low + self.p2 * m_high, m_high))
    }

    /// dP/dw by the envelope identity, given the node's policy pieces.
    fn envelope_derivative(&self, branch: &BindingBranch<F>, c2: F) -> Option<F> {
        let (pooled, m_high) = self.branch_marginals(branch)?;
        let m2 = self.spec.eval(c2).ok()?.marginal;
        Some(-(self.p1 / pooled + self.p2 * m_high / (pooled * m2)))
    }

    /// Full-information objective for a common continuation.
    fn objective_full_info(&self, w: F, w_next: F) -> Option<(F, F)> {
        let omb = self.one_minus_beta();
        let h = (w - self.beta * w_next) / omb;
        let c = self.spec.inverse(h).ok()?;
        if !(c.is_finite() && c > F::zero()) {
            return None;
        }
        let value = -omb * (c - self.mean) + self.beta * self.interp_value(w_next);
        value.is_finite().then_some((value, c))
    }
}

struct BindingBranch<F> {
    tau1: F,
    delivered1: F,
    delivered2: F,
}

/// Piecewise-linear interpolation of per-node dP/dw values; non-finite
/// entries mark nodes without a policy.
struct DerivField<'a, F> {
    grid: &'a [F],
    d: &'a [F],
}

impl<F: Scalar> DerivField<'_, F> {
    fn eval(&self, w: F) -> Option<F> {
        let n = self.grid.len();
        let clamped = w.max(self.grid[0]).min(self.grid[n - 1]);
        let step = self.grid[1] - self.grid[0];
        let i = (((clamped - self.grid[0]) / step).lossy().floor() as usize).min(n - 2);
        let (a, b) = (self.d[i], self.d[i + 1]);
        if !(a.is_finite() && b.is_finite()) {
            return None;
        }
        let frac = (clamped - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        Some(a + frac * (b - a))
    }
}

/// Boundary of a one-sided monotone feasibility region: with `lower_side`,
/// the smallest feasible point in [a, b] given that b is feasible; otherwise
/// the largest given that a is feasible.
fn bisect_boundary<F: Scalar>(a: F, b: F, feasible: impl Fn(F) -> bool, lower_side: bool) -> F {
    let (mut bad, mut good) = if lower_side { (a, b) } else { (b, a) };
    if feasible(bad) {
        return bad;
    }
    for _ in 0..90 {
        let mid = (bad + good) * F::of(0.5);
        if feasible(mid) {
            good = mid;
        } else {
            bad = mid;
        }
        if (good - bad).abs() <= F::epsilon() * (F::one() + good.abs()) {
            break;
        }
    }
    good
}

/// Root of a decreasing function on [lo, hi] by bisection. Endpoint signs
/// that exclude an interior root pick the corner the first-order condition
/// points at; evaluation failures near an endpoint nudge inward.
fn decreasing_root<F: Scalar>(mut lo: F, mut hi: F, f: impl Fn(F) -> Option<F>) -> Option<F> {
    let nudge = (hi - lo) * F::of(1e-12);
    let mut f_lo = f(lo);
    for _ in 0..8 {
        if f_lo.is_some() {
            break;
        }
        lo = lo + nudge;
        f_lo = f(lo);
    }
    let mut f_hi = f(hi);
    for _ in 0..8 {
        if f_hi.is_some() {
            break;
        }
        hi = hi - nudge;
        f_hi = f(hi);
    }
    let (f_lo, f_hi) = (f_lo?, f_hi?);
    if f_lo <= F::zero() {
        return Some(lo);
    }
    if f_hi >= F::zero() {
        return Some(hi);
    }
    for _ in 0..120 {
        let mid = (lo + hi) * F::of(0.5);
        match f(mid) {
            Some(v) if v > F::zero() => lo = mid,
            Some(_) => hi = mid,
            None => return Some(lo),
        }
        if (hi - lo).abs() <= F::epsilon() * (F::one() + hi.abs()) {
            break;
        }
    }
    Some((lo + hi) * F::of(0.5))
}

/// Root of a first-order condition on [lo, hi] found by scanning for a sign
/// change and bisecting it; a one-signed condition selects the endpoint it
/// pushes toward.
fn scanned_root<F: Scalar>(lo: F, hi: F, f: impl Fn(F) -> Option<F>) -> Option<F> {
    const POINTS: usize = 17;
    let mut samples = Vec::with_capacity(POINTS);
    for k in 0..POINTS {
        let x = lo + (hi - lo) * F::of(k as f64 / (POINTS - 1) as f64);
        if let Some(v) = f(x) {
            samples.push((x, v));
        }
    }
    if samples.is_empty() {
        return None;
    }
    for pair in samples.windows(2) {
        let ((mut a, fa), (mut b, _)) = (pair[0], pair[1]);
        if fa <= F::zero() {
            continue;
        }
        if pair[1].1 > F::zero() {
            continue;
        }
        // fa > 0 >= fb: bisect the decreasing crossing.
        for _ in 0..120 {
            let mid = (a + b) * F::of(0.5);
            match f(mid) {
                Some(v) if v > F::zero() => a = mid,
                Some(_) => b = mid,
                None => break,
            }
            if (b - a).abs() <= F::epsilon() * (F::one() + b.abs()) {
                break;
            }
        }
        return Some((a + b) * F::of(0.5));
    }
    // No crossing: the condition is one-signed over the bracket.
    if samples.iter().all(|&(_, v)| v > F::zero()) {
        return samples.last().map(|&(x, _)| x);
    }
    if samples.iter().all(|&(_, v)| v < F::zero()) {
        return samples.first().map(|&(x, _)| x);
    }
    // Mixed without a clean decreasing crossing: take the flattest point.
    samples
        .into_iter()
        .min_by(|a, b| {
            a.1.abs()
                .partial_cmp(&b.1.abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|(x, _)| x)
}

/// One node's refined continuous policy.
struct RefinedNode<F> {
    w1: F,
    w2: F,
    c2: F,
}

/// Solves the node's first-order conditions against the derivative field by
/// coordinate iteration, starting from the node-grid optimum.
fn refine_node<F: Scalar>(
    ctx: &NodeContext<'_, F>,
    dfield: &DerivField<'_, F>,
    w: F,
    start: (F, F),
) -> Option<RefinedNode<F>> {
    let (w_lo, w_hi) = (ctx.grid[0], *ctx.grid.last().unwrap());
    let step = ctx.grid[1] - ctx.grid[0];
    let (mut w1, mut w2) = start;

    for _ in 0..12 {
        let branch = ctx.binding_branch(w, w1)?;
        // Continuation for the high report: root of P'(w₂) + 1/u'(c₂) on the
        // feasible interval (truth telling of the low type cuts it from
        // below, consumption validity from above).
        let feasible = |x: F| ctx.high_state(&branch, x).is_some();
        let probe = if feasible(w2) {
            w2
        } else {
            (0..=64)
                .map(|k| w_lo + (w_hi - w_lo) * F::of(k as f64 / 64.0))
                .find(|&x| feasible(x))?
        };
        let lb = bisect_boundary(w_lo, probe, feasible, true);
        let ub = bisect_boundary(probe, w_hi, feasible, false);
        let new_w2 = decreasing_root(lb, ub, |x| {
            let (c2, _) = ctx.high_state(&branch, x)?;
            Some(dfield.eval(x)? + ctx.spec.eval(c2).ok()?.marginal.recip())
        })?;

        // Continuation for the low report: balance its own promise cost
        // against the high branch's consumption recovery.
        let new_w1 = scanned_root(
            (w1 - step - step).max(w_lo),
            (w1 + step + step).min(w_hi),
            |x| {
                let b = ctx.binding_branch(w, x)?;
                let (pooled, m_high) = ctx.branch_marginals(&b)?;
                let (c2x, _) = ctx.high_state(&b, new_w2)?;
                let m2 = ctx.spec.eval(c2x).ok()?.marginal;
                Some(
                    ctx.p1 * (pooled.recip() + dfield.eval(x)?)
                        - ctx.p2 * (F::one() - m_high / pooled) / m2,
                )
            },
        )?;

        let moved = (new_w1 - w1).abs().max((new_w2 - w2).abs());
        w1 = new_w1;
        w2 = new_w2;
        if moved <= F::of(1e-13) * (F::one() + w_hi.abs()) {
            break;
        }
    }

    let branch = ctx.binding_branch(w, w1)?;
    let (c2, _) = ctx.high_state(&branch, w2)?;
    Some(RefinedNode { w1, w2, c2 })
}

/// Value iteration for the promised-utility contract.
///
/// Requires exactly two income states and `grid_size >= 10`; iterates until
/// the sup-norm change drops to `tol`, then refines the converged policies
/// to continuous continuation promises.
pub fn baseline_solve<F: Scalar>(
    spec: &UtilitySpec<F>,
    cfg: &MechanismConfig<F>,
    dist: &IncomeDistribution<F>,
    grid_size: usize,
    tol: F,
    options: BaselineOptions,
) -> Result<BaselineModel<F>> {
    if dist.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "the promised-utility baseline supports exactly 2 income states, got {}",
            dist.len()
        )));
    }
    if grid_size < 10 {
        return Err(Error::Domain {
            what: "grid_size",
            value: grid_size as f64,
            requires: "at least 10",
        });
    }
    if !(tol.is_finite() && tol > F::zero()) {
        return Err(Error::Domain {
            what: "tol",
            value: tol.lossy(),
            requires: "a finite positive value",
        });
    }

    let beta = cfg.beta();
    let w_lo = spec.eval(F::of(GRID_CONSUMPTION_FLOOR))?.utility;
    let w_hi = spec.eval(*dist.support().last().unwrap() + dist.span())?.utility;
    let g = grid_size;
    let grid: Vec<F> = (0..g)
        .map(|i| w_lo + (w_hi - w_lo) * F::of(i as f64) / F::of((g - 1) as f64))
        .collect();

    fn make_ctx<'a, F: Scalar>(
        spec: &'a UtilitySpec<F>,
        beta: F,
        dist: &IncomeDistribution<F>,
        grid: &'a [F],
        value: &'a [F],
    ) -> NodeContext<'a, F> {
        NodeContext {
            spec,
            beta,
            p1: dist.prob(0),
            p2: dist.prob(1),
            e1: dist.income(0),
            e2: dist.income(1),
            de: dist.income(1) - dist.income(0),
            mean: dist.mean(),
            grid,
            value,
            ic_tol: F::epsilon() * F::of(64.0),
        }
    }

    // Sweep-invariant low-branch table for the node×node search.
    let branches: Vec<Vec<Option<BindingBranch<F>>>> = if options.ic_enabled {
        let ctx = make_ctx(spec, beta, dist, &grid, &[]);
        grid.par_iter()
            .map(|&w| grid.iter().map(|&w1| ctx.binding_branch(w, w1)).collect())
            .collect()
    } else {
        Vec::new()
    };

    let mut value = vec![F::zero(); g];
    let mut best_pairs: Vec<Option<(usize, usize)>> = vec![None; g];
    let mut residuals: Vec<F> = Vec::new();
    let mut converged = false;

    for sweep in 0..options.max_sweeps {
        let snapshot = value.clone();
        let updated: Vec<(F, Option<(usize, usize)>)> = (0..g)
            .into_par_iter()
            .map(|iw| {
                let ctx = make_ctx(spec, beta, dist, &grid, &snapshot);
                let w = grid[iw];
                let mut best = (F::neg_infinity(), None);
                if options.ic_enabled {
                    for i1 in 0..g {
                        let Some(branch) = &branches[iw][i1] else { continue };
                        if !snapshot[i1].is_finite() {
                            continue;
                        }
                        for i2 in 0..g {
                            if !snapshot[i2].is_finite() {
                                continue;
                            }
                            if let Some(v) = ctx.objective(branch, grid[i1], grid[i2]) {
                                if v > best.0 {
                                    best = (v, Some((i1, i2)));
                                }
                            }
                        }
                    }
                } else {
                    for (i_next, &w_next) in grid.iter().enumerate() {
                        if !snapshot[i_next].is_finite() {
                            continue;
                        }
                        if let Some((v, _)) = ctx.objective_full_info(w, w_next) {
                            if v > best.0 {
                                best = (v, Some((i_next, i_next)));
                            }
                        }
                    }
                }
                best
            })
            .collect();

        let mut change = F::zero();
        for (iw, (v, _)) in updated.iter().enumerate() {
            let delta = if v.is_finite() && value[iw].is_finite() {
                (*v - value[iw]).abs()
            } else if v.is_finite() != value[iw].is_finite() && sweep > 0 {
                // A node flipping feasibility after the first sweep keeps
                // the iteration going; the drop from the zero init to -inf
                // on sweep 0 is not a residual.
                F::infinity()
            } else {
                F::zero()
            };
            change = change.max(delta);
        }
        value = updated.iter().map(|(v, _)| *v).collect();
        best_pairs = updated.into_iter().map(|(_, p)| p).collect();
        residuals.push(change);
        if sweep % 50 == 0 {
            log::debug!("baseline sweep {sweep}: sup change {change}");
        }
        if change <= tol {
            log::info!(
                "baseline value iteration converged after {} sweeps (change {change})",
                sweep + 1
            );
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: options.max_sweeps,
            residual: residuals.last().map_or(f64::NAN, |r| r.lossy()),
        });
    }

    // Policy extraction. Full information keeps the node optimum (the true
    // continuation is the node itself). With incentives, the node pairs seed
    // continuous promises solved from the first-order conditions against the
    // envelope-derivative field, iterated to self-consistency; node values
    // alone cannot place promises at sub-drift accuracy.
    let policy: Vec<Option<GridPolicy<F>>> = if !options.ic_enabled {
        (0..g)
            .into_par_iter()
            .map(|iw| {
                let ctx = make_ctx(spec, beta, dist, &grid, &value);
                let (i_next, _) = best_pairs[iw]?;
                let (_, c) = ctx.objective_full_info(grid[iw], grid[i_next])?;
                let omb = F::one() - beta;
                let delivered = omb * spec.eval(c).ok()?.utility + beta * grid[i_next];
                Some(GridPolicy {
                    per_state: (0..2)
                        .map(|s| StatePolicy {
                            transfer: c - dist.income(s),
                            next_promise: grid[i_next],
                            delivered,
                        })
                        .collect(),
                })
            })
            .collect()
    } else {
        let ctx = make_ctx(spec, beta, dist, &grid, &value);
        let mut refined: Vec<Option<RefinedNode<F>>> = (0..g)
            .map(|iw| {
                let (i1, i2) = best_pairs[iw]?;
                let branch = ctx.binding_branch(grid[iw], grid[i1])?;
                let (c2, _) = ctx.high_state(&branch, grid[i2])?;
                Some(RefinedNode {
                    w1: grid[i1],
                    w2: grid[i2],
                    c2,
                })
            })
            .collect();

        for pass in 0..16 {
            let derivs: Vec<F> = (0..g)
                .map(|iw| {
                    refined[iw]
                        .as_ref()
                        .and_then(|node| {
                            let branch = ctx.binding_branch(grid[iw], node.w1)?;
                            ctx.envelope_derivative(&branch, node.c2)
                        })
                        .unwrap_or_else(F::nan)
                })
                .collect();
            let dfield = DerivField {
                grid: &grid,
                d: &derivs,
            };
            let next: Vec<Option<RefinedNode<F>>> = (0..g)
                .into_par_iter()
                .map(|iw| {
                    let ctx = make_ctx(spec, beta, dist, &grid, &value);
                    let node = refined[iw].as_ref()?;
                    refine_node(&ctx, &dfield, grid[iw], (node.w1, node.w2))
                        .or(Some(RefinedNode {
                            w1: node.w1,
                            w2: node.w2,
                            c2: node.c2,
                        }))
                })
                .collect();
            let moved = refined
                .iter()
                .zip(&next)
                .filter_map(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => {
                        Some((a.w1 - b.w1).abs().max((a.w2 - b.w2).abs()))
                    }
                    _ => None,
                })
                .fold(F::zero(), F::max);
            refined = next;
            log::debug!("baseline refinement pass {pass}: max move {moved}");
            if moved <= F::of(1e-11) {
                break;
            }
        }

        refined
            .into_iter()
            .enumerate()
            .map(|(iw, node)| {
                let node = node?;
                let branch = ctx.binding_branch(grid[iw], node.w1)?;
                let (c2, tau2) = ctx.high_state(&branch, node.w2)?;
                let omb = F::one() - beta;
                Some(GridPolicy {
                    per_state: vec![
                        StatePolicy {
                            transfer: branch.tau1,
                            next_promise: node.w1,
                            delivered: branch.delivered1,
                        },
                        StatePolicy {
                            transfer: tau2,
                            next_promise: node.w2,
                            delivered: omb * spec.eval(c2).ok()?.utility + beta * node.w2,
                        },
                    ],
                })
            })
            .collect()
    };

    Ok(BaselineModel {
        grid,
        value,
        policy,
        residuals,
        ic_enabled: options.ic_enabled,
    })
}

/// Per-period statistics of simulated promise paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselinePeriodStats<F> {
    pub t: u32,
    pub mean_w: F,
    pub var_w: F,
    /// Paths ending at a node without a policy, cumulative.
    pub censored_count: u64,
}

/// Outcome of [`baseline_simulate`].
#[derive(Debug, Clone)]
pub struct BaselineStats<F> {
    pub periods: Vec<BaselinePeriodStats<F>>,
    /// Largest |Σ pᵢ·deliveredᵢ(w) − w| over all simulated states, with the
    /// delivered values recomputed from the interpolated policy.
    pub max_promise_residual: F,
    /// Continuation promises clamped back into the grid interval.
    pub clamped_count: u64,
}

/// Streaming mean/variance accumulator (Welford); exact for identical
/// observations.
#[derive(Debug, Clone, Copy)]
struct RunningMoments<F> {
    count: u64,
    mean: F,
    m2: F,
}

impl<F: Scalar> RunningMoments<F> {
    fn new() -> Self {
        Self {
            count: 0,
            mean: F::zero(),
            m2: F::zero(),
        }
    }

    fn push(&mut self, x: F) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean = self.mean + delta / F::of(self.count as f64);
        self.m2 = self.m2 + delta * (x - self.mean);
    }

    fn variance(&self) -> F {
        if self.count == 0 {
            F::zero()
        } else {
            self.m2 / F::of(self.count as f64)
        }
    }
}

/// Simulates promise paths under the solved policy with i.i.d. income
/// draws. Paths start at `w0` exactly and evolve through the interpolated
/// per-node policies; a path reaching a node pair without policies is
/// censored from that period on.
#[allow(clippy::too_many_arguments)]
pub fn baseline_simulate<F: Scalar>(
    model: &BaselineModel<F>,
    spec: &UtilitySpec<F>,
    cfg: &MechanismConfig<F>,
    dist: &IncomeDistribution<F>,
    w0: F,
    agents: u64,
    periods: u32,
    seed: u64,
) -> Result<BaselineStats<F>> {
    if agents == 0 {
        return Err(Error::Domain {
            what: "agents",
            value: 0.0,
            requires: "at least 1",
        });
    }
    let beta = cfg.beta();
    let omb = F::one() - beta;
    let (w_min, w_max) = (model.grid()[0], *model.grid().last().unwrap());
    let streams = IncomeStreams::new(seed);

    let mut moments = vec![RunningMoments::new(); periods as usize + 1];
    let mut censored_at = vec![0u64; periods as usize + 1];
    let mut max_promise_residual = F::zero();
    let mut clamped_count = 0u64;

    for agent in 0..agents {
        let mut stream = streams.agent(agent);
        let mut w = w0.max(w_min).min(w_max);
        if w != w0 {
            clamped_count += 1;
        }
        moments[0].push(w);
        for t in 1..=periods {
            let Some(per_state) = model.interpolate_policy(w) else {
                censored_at[t as usize] += 1;
                break;
            };
            // Promise keeping under the interpolated policy, measured.
            let mut kept = F::zero();
            let mut valid = true;
            for (s, &(transfer, next)) in per_state.iter().enumerate() {
                let c = dist.income(s) + transfer;
                match spec.eval(c) {
                    Ok(p) => {
                        kept = kept + dist.prob(s) * (omb * p.utility + beta * next);
                    }
                    Err(_) => valid = false,
                }
            }
            if valid {
                max_promise_residual = max_promise_residual.max((kept - w).abs());
            }
            let state = sample_state(dist, &mut stream);
            let mut next = per_state[state].1;
            if next < w_min || next > w_max {
                next = next.max(w_min).min(w_max);
                clamped_count += 1;
            }
            w = next;
            moments[t as usize].push(w);
        }
    }

    let mut cumulative_censored = 0u64;
    let mut periods_out = Vec::with_capacity(moments.len());
    for (t, m) in moments.iter().enumerate() {
        cumulative_censored += censored_at[t];
        if m.count == 0 {
            return Err(Error::EmptyCrossSection { period: t as u32 });
        }
        periods_out.push(BaselinePeriodStats {
            t: t as u32,
            mean_w: m.mean,
            var_w: m.variance(),
            censored_count: cumulative_censored,
        });
    }
    Ok(BaselineStats {
        periods: periods_out,
        max_promise_residual,
        clamped_count,
    })
}
