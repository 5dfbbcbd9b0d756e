//! The weight recursion, its incentive-compatibility verifier, the one-step
//! value-recursion residual, the firm-side one-step evaluation, and a
//! Neumann-series solver for linear fixed points.
//!
//! At the heart sits the recursion producing tomorrow's allocation weights
//! from today's weight and the reported income:
//!
//! ```text
//! λ'(e) = v̄₁⁻¹( v̄₁(λ) + λ⁻¹ β⁻¹ (v₂(λ,e) − E[v₂(λ,e)]) )
//! ```
//!
//! Continuation values v̄₁(λ'(e)) are a mean-preserving spread of v̄₁(λ) by
//! construction, which is exactly what the verification surface here
//! measures: `WeightMap::mean_preservation_residual` checks the spread,
//! `check_incentive_compatibility` scores every (truth, report) pair,
//! `one_step_residual` evaluates the value recursion, and `firm_one_step`
//! reports how the firm values the continuation weights.
//!
//! Continuation values no weight can deliver are hard
//! [`Error::Infeasible`](crate::Error::Infeasible) failures; projecting them
//! back into range would silently destroy the martingale property.

use crate::economy::{deviation_at, firm_value_mean, transfer, IncomeDistribution, MechanismConfig};
use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Scalar};
use crate::utility::UtilitySpec;

/// Next-period weight per income state, in support order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap<F> {
    entries: Vec<(F, F)>,
}

impl<F: Scalar> WeightMap<F> {
    /// (income, next weight) pairs in support order.
    pub fn entries(&self) -> &[(F, F)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Next weight for the state with index `state`.
    pub fn weight_at(&self, state: usize) -> F {
        self.entries[state].1
    }

    /// Next weight for an exact income value, if it is a support point.
    pub fn get(&self, e: F) -> Option<F> {
        self.entries
            .iter()
            .find(|(income, _)| *income == e)
            .map(|&(_, w)| w)
    }

    /// | Σᵢ pᵢ v̄₁(λ'(eⁱ)) − v̄₁(λ) |: how far the continuation values are
    /// from averaging back to today's value. Zero up to rounding for maps
    /// produced by [`next_weights`].
    pub fn mean_preservation_residual(
        &self,
        spec: &UtilitySpec<F>,
        dist: &IncomeDistribution<F>,
        lambda: F,
    ) -> Result<F> {
        let mean = compensated_sum(
            self.entries
                .iter()
                .zip(dist.probs())
                .map(|(&(_, w), &p)| Ok(p * spec.full_insurance_value(w)?))
                .collect::<Result<Vec<F>>>()?,
        );
        Ok((mean - spec.full_insurance_value(lambda)?).abs())
    }
}

/// Tomorrow's weight for a single income state.
pub fn next_weight<F: Scalar>(
    spec: &UtilitySpec<F>,
    cfg: &MechanismConfig<F>,
    dist: &IncomeDistribution<F>,
    lambda: F,
    state: usize,
) -> Result<F> {
    let income = dist.income(state);
    let target = spec.full_insurance_value(lambda)?
        + deviation_at(cfg, dist, state) / (lambda * cfg.beta());
    let infeasible = |value: F| Error::Infeasible {
        income: income.lossy(),
        value: value.lossy(),
    };
    if !spec.value_range().contains(target) {
        return Err(infeasible(target));
    }
    let next = spec.weight_for_value(target)?;
    // Guard against overflow/underflow of the analytic inverse itself.
    if !(next.is_finite() && next > F::zero()) {
        return Err(infeasible(target));
    }
    Ok(next)
}

/// Tomorrow's weights for every income state.
pub fn next_weights<F: Scalar>(
    spec: &UtilitySpec<F>,
    cfg: &MechanismConfig<F>,
    dist: &IncomeDistribution<F>,
    lambda: F,
) -> Result<WeightMap<F>> {
    let entries = (0..dist.len())
        .map(|i| Ok((dist.income(i), next_weight(spec, cfg, dist, lambda, i)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightMap { entries })
}

/// Scored truth-telling check over all ordered (truth, report) pairs.
#[derive(Debug, Clone)]
pub struct IcReport<F> {
    lambda: F,
    incomes: Vec<F>,
    /// Row-major M×M matrix; `slack[i*M + j]` is the payoff of reporting
    /// truthfully in state i minus the payoff of reporting state j.
    slack: Vec<F>,
    /// Pairs whose misreport consumption was zero or negative.
    boundary: Vec<(usize, usize)>,
}

impl<F: Scalar> IcReport<F> {
    pub fn lambda(&self) -> F {
        self.lambda
    }

    pub fn incomes(&self) -> &[F] {
        &self.incomes
    }

    pub fn states(&self) -> usize {
        self.incomes.len()
    }

    pub fn slack(&self, truth: usize, report: usize) -> F {
        self.slack[truth * self.states() + report]
    }

    /// Pairs flagged because the misreport drove consumption to or below
    /// zero. Their slack is +∞ where the family diverges at 0⁺ and the
    /// finite u(0) score for CRRA γ < 1.
    pub fn boundary_pairs(&self) -> &[(usize, usize)] {
        &self.boundary
    }

    /// Minimum slack over all ordered pairs and its argmin.
    pub fn min_slack(&self) -> (F, (usize, usize)) {
        self.min_over(|_, _| true)
    }

    /// Minimum slack over pairs whose misreport consumption stayed positive.
    /// This is the domain on which truth telling is claimed.
    pub fn min_interior_slack(&self) -> (F, (usize, usize)) {
        self.min_over(|i, j| !self.boundary.contains(&(i, j)))
    }

    fn min_over(&self, keep: impl Fn(usize, usize) -> bool) -> (F, (usize, usize)) {
        let m = self.states();
        let mut best = (F::infinity(), (0, 0));
        for i in 0..m {
            for j in 0..m {
                if keep(i, j) && self.slack(i, j) < best.0 {
                    best = (self.slack(i, j), (i, j));
                }
            }
        }
        // The diagonal is always kept and is exactly zero.
        if best.0 == F::infinity() {
            best.0 = F::zero();
        }
        best
    }

    /// Truth telling holds if no pair gains more than `tol` from lying.
    pub fn is_compatible(&self, tol: F) -> bool {
        self.min_slack().0 >= -tol
    }
}

/// Scores every (truth, report) pair at weight `lambda` under the weights in
/// `wm`:
///
/// ```text
/// slack(e, ẽ) = [(1-β) u(e + τ(λ,e)) + β v̄₁(λ'(e))]
///             − [(1-β) u(e + τ(λ,ẽ)) + β v̄₁(λ'(ẽ))]
/// ```
///
/// Misreports that drive consumption to or below zero are scored −∞ (slack
/// +∞) for families unbounded below, and u(0) = 0 for CRRA γ < 1; either way
/// the pair is flagged in the report.
pub fn check_incentive_compatibility<F: Scalar>(
    spec: &UtilitySpec<F>,
    cfg: &MechanismConfig<F>,
    dist: &IncomeDistribution<F>,
    lambda: F,
    wm: &WeightMap<F>,
) -> Result<IcReport<F>> {
    let m = dist.len();
    if wm.len() != m {
        return Err(Error::InvalidInput(format!(
            "weight map covers {} states but the distribution has {m}",
            wm.len()
        )));
    }
    let beta = cfg.beta();
    let one_minus_beta = F::one() - beta;
    let c_star = spec.full_insurance_consumption(lambda)?;
    let continuation: Vec<F> = (0..m)
        .map(|j| Ok(beta * spec.full_insurance_value(wm.weight_at(j))?))
        .collect::<Result<Vec<_>>>()?;

    let mut slack = vec![F::zero(); m * m];
    let mut boundary = Vec::new();
    for i in 0..m {
        let own = one_minus_beta * spec.eval(c_star)?.utility + continuation[i];
        for j in 0..m {
            if i == j {
                continue; // identical branches; slack stays exactly zero
            }
            // Consumption when state i reports j: e_i + τ(λ, e_j).
            let c_misreport = dist.income(i) + (c_star - dist.income(j));
            let value = if c_misreport > F::zero() {
                one_minus_beta * spec.eval(c_misreport)?.utility + continuation[j]
            } else {
                boundary.push((i, j));
                match spec.utility_at_zero_consumption() {
                    Some(u0) => one_minus_beta * u0 + continuation[j],
                    None => F::neg_infinity(),
                }
            };
            slack[i * m + j] = own - value;
        }
    }
    Ok(IcReport {
        lambda,
        incomes: dist.support().to_vec(),
        slack,
        boundary,
    })
}

/// Residual of the one-step value recursion at `lambda`:
///
/// ```text
/// | E[(1-β) u(e + τ(λ,e)) + β v̄₁(λ'(e))] − v̄₁(λ) |
/// ```
///
/// Zero up to rounding wherever the recursion is feasible.
pub fn one_step_residual<F: Scalar>(
    spec: &UtilitySpec<F>,
    cfg: &MechanismConfig<F>,
    dist: &IncomeDistribution<F>,
    lambda: F,
) -> Result<F> {
    let wm = next_weights(spec, cfg, dist, lambda)?;
    let beta = cfg.beta();
    let terms = (0..dist.len())
        .map(|i| {
            let c = dist.income(i) + transfer(spec, lambda, dist.income(i))?;
            let flow = (F::one() - beta) * spec.eval(c)?.utility;
            let cont = beta * spec.full_insurance_value(wm.weight_at(i))?;
            Ok(dist.prob(i) * (flow + cont))
        })
        .collect::<Result<Vec<F>>>()?;
    Ok((compensated_sum(terms) - spec.full_insurance_value(lambda)?).abs())
}

/// Firm-side valuation of a weight map: v̄₂ at each continuation weight, its
/// probability-weighted mean, and today's v̄₂(λ) for comparison. No
/// optimization is performed; the numbers measure the indifference claim
/// rather than asserting it.
#[derive(Debug, Clone, PartialEq)]
pub struct FirmOneStep<F> {
    /// (income, v̄₂(λ'(e))) per state in support order.
    pub per_state: Vec<(F, F)>,
    /// Σᵢ pᵢ v̄₂(λ'(eⁱ)).
    pub mean: F,
    /// v̄₂(λ) today.
    pub current: F,
}

impl<F: Scalar> FirmOneStep<F> {
    /// mean − current; how far the one-step firm value moved.
    pub fn gap(&self) -> F {
        self.mean - self.current
    }
}

pub fn firm_one_step<F: Scalar>(
    spec: &UtilitySpec<F>,
    cfg: &MechanismConfig<F>,
    dist: &IncomeDistribution<F>,
    lambda: F,
    wm: &WeightMap<F>,
) -> Result<FirmOneStep<F>> {
    if wm.len() != dist.len() {
        return Err(Error::InvalidInput(format!(
            "weight map covers {} states but the distribution has {}",
            wm.len(),
            dist.len()
        )));
    }
    let per_state: Vec<(F, F)> = (0..dist.len())
        .map(|i| {
            Ok((
                dist.income(i),
                firm_value_mean(spec, cfg, dist, wm.weight_at(i))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = compensated_sum(
        per_state
            .iter()
            .zip(dist.probs())
            .map(|(&(_, v), &p)| p * v),
    );
    Ok(FirmOneStep {
        per_state,
        mean,
        current: firm_value_mean(spec, cfg, dist, lambda)?,
    })
}

// ---------------------------------------------------------------------------
// Neumann series solver
// ---------------------------------------------------------------------------

/// The linear fixed-point problem x = L x + b for a dense operator L.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFixedPointProblem<F> {
    dim: usize,
    operator: Vec<F>, // row-major dim × dim
    offset: Vec<F>,
}

impl<F: Scalar> LinearFixedPointProblem<F> {
    pub fn new(dim: usize, operator: Vec<F>, offset: Vec<F>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".to_string()));
        }
        if operator.len() != dim * dim {
            return Err(Error::InvalidInput(format!(
                "operator has {} entries, expected {}",
                operator.len(),
                dim * dim
            )));
        }
        if offset.len() != dim {
            return Err(Error::InvalidInput(format!(
                "offset has {} entries, expected {dim}",
                offset.len()
            )));
        }
        if operator.iter().chain(offset.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "operator and offset must be finite".to_string(),
            ));
        }
        Ok(Self {
            dim,
            operator,
            offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn operator(&self) -> &[F] {
        &self.operator
    }

    pub fn offset(&self) -> &[F] {
        &self.offset
    }

    /// Induced 1-norm: max absolute column sum.
    pub fn operator_one_norm(&self) -> F {
        let mut norm = F::zero();
        for j in 0..self.dim {
            let col = compensated_sum((0..self.dim).map(|i| self.operator[i * self.dim + j].abs()));
            norm = norm.max(col);
        }
        norm
    }

    fn apply(&self, x: &[F], out: &mut [F]) {
        for (i, slot) in out.iter_mut().enumerate() {
            let row = &self.operator[i * self.dim..(i + 1) * self.dim];
            *slot = compensated_sum(row.iter().zip(x).map(|(&a, &v)| a * v));
        }
    }
}

fn one_norm<F: Scalar>(x: &[F]) -> F {
    compensated_sum(x.iter().map(|v| v.abs()))
}

/// A Neumann-series solution together with its iteration count and residual.
#[derive(Debug, Clone, PartialEq)]
pub struct NeumannSolution<F> {
    pub solution: Vec<F>,
    pub iterations: usize,
    /// ‖x − (L x + b)‖₁ of the returned solution.
    pub residual: F,
}

/// Solves x = L x + b by accumulating the partial sums Σ Lⁿ b, stopping when
/// the increment's 1-norm falls below `tol · (1 − ‖L‖₁)`. Requires
/// ‖L‖₁ < 1; the returned solution satisfies ‖x − (L x + b)‖₁ ≤ tol.
pub fn neumann_solve<F: Scalar>(
    problem: &LinearFixedPointProblem<F>,
    tol: F,
) -> Result<NeumannSolution<F>> {
    if !(tol.is_finite() && tol > F::zero()) {
        return Err(Error::Domain {
            what: "tolerance",
            value: tol.lossy(),
            requires: "a finite positive value",
        });
    }
    let norm = problem.operator_one_norm();
    if norm >= F::one() {
        return Err(Error::ContractionViolation { norm: norm.lossy() });
    }

    let threshold = tol * (F::one() - norm);
    let mut sum = problem.offset().to_vec();
    let mut term = problem.offset().to_vec();
    let mut next = vec![F::zero(); problem.dim()];
    let mut iterations = 0usize;

    // ‖Lⁿ b‖₁ ≤ ‖L‖₁ⁿ ‖b‖₁, so the contraction factor bounds the number of
    // iterations needed; a small slack covers rounding.
    let budget = if one_norm(&sum) <= threshold || norm == F::zero() {
        1
    } else {
        let bound = (threshold / one_norm(&sum)).lossy().ln() / norm.lossy().ln();
        (bound.ceil().max(1.0) as usize).saturating_mul(2) + 16
    };

    while one_norm(&term) > threshold {
        problem.apply(&term, &mut next);
        std::mem::swap(&mut term, &mut next);
        for (s, &t) in sum.iter_mut().zip(&term) {
            *s = *s + t;
        }
        iterations += 1;
        if iterations > budget {
            return Err(Error::NonConvergence {
                iterations,
                residual: one_norm(&term).lossy(),
            });
        }
    }

    problem.apply(&sum, &mut next);
    let residual = one_norm(
        &sum.iter()
            .zip(&next)
            .zip(problem.offset())
            .map(|((&s, &lx), &b)| s - (lx + b))
            .collect::<Vec<_>>(),
    );
    Ok(NeumannSolution {
        solution: sum,
        iterations,
        residual,
    })
}
