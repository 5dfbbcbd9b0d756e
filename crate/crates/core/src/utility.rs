//! Closed-form utility families and the value maps they induce.
//!
//! Two families are supported:
//!
//! * `Log`:  u(c) = ln c,            u'(c) = 1/c
//! * `Crra`: u(c) = c^(1-γ)/(1-γ),   u'(c) = c^(-γ),   γ > 0, γ ≠ 1
//!
//! Log is the γ = 1 member of the CRRA family. Both satisfy the standing
//! assumptions: strictly increasing, strictly concave, and u' maps the
//! positive reals *onto* the positive reals. CARA does not (its marginal
//! utility is bounded above), which is why it is rejected at configuration
//! time rather than supported.
//!
//! The allocation weight λ pins down full-insurance consumption through
//! u'(c) = 1/λ. Everything downstream runs through four induced maps:
//!
//! * `full_insurance_consumption`: λ ↦ (u')⁻¹(1/λ)
//! * `full_insurance_value`:       λ ↦ u((u')⁻¹(1/λ))      (written v̄₁)
//! * `weight_for_value`:           the exact inverse of v̄₁
//! * `inverse`:                    u⁻¹, the certainty-equivalent map
//!
//! All inverses are evaluated analytically, never by an iterative solve,
//! so repeated application inside the weight recursion is bit-stable.
//! Out-of-range requests are hard errors, not clamps.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A utility family satisfying the standing assumptions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilitySpec<F> {
    /// u(c) = ln c.
    Log,
    /// u(c) = c^(1-γ)/(1-γ) with γ > 0, γ ≠ 1.
    Crra { gamma: F },
}

/// Value of u and u' at one consumption level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEval<F> {
    pub utility: F,
    pub marginal: F,
}

/// The range of u as an open interval, queryable per family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueRange {
    /// Log: all reals.
    All,
    /// CRRA with γ < 1: (0, ∞).
    Positive,
    /// CRRA with γ > 1: (-∞, 0).
    Negative,
}

impl ValueRange {
    /// Whether `v` is an attainable utility value (interval bounds are open;
    /// non-finite values are never attainable).
    pub fn contains<F: Scalar>(&self, v: F) -> bool {
        v.is_finite()
            && match self {
                ValueRange::All => true,
                ValueRange::Positive => v > F::zero(),
                ValueRange::Negative => v < F::zero(),
            }
    }
}

impl fmt::Display for ValueRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueRange::All => write!(f, "(-inf, inf)"),
            ValueRange::Positive => write!(f, "(0, inf)"),
            ValueRange::Negative => write!(f, "(-inf, 0)"),
        }
    }
}

fn check_positive<F: Scalar>(what: &'static str, x: F) -> Result<()> {
    if x.is_finite() && x > F::zero() {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            value: x.lossy(),
            requires: "a finite positive value",
        })
    }
}

impl<F: Scalar> UtilitySpec<F> {
    /// Logarithmic utility.
    pub fn log() -> Self {
        UtilitySpec::Log
    }

    /// CRRA utility with relative risk aversion `gamma`.
    ///
    /// `gamma` must be positive and different from 1; the γ = 1 case is
    /// `UtilitySpec::Log`.
    pub fn crra(gamma: F) -> Result<Self> {
        if !(gamma.is_finite() && gamma > F::zero()) {
            return Err(Error::InvalidConfig(format!(
                "CRRA gamma must be a finite positive value, got {gamma}"
            )));
        }
        if gamma == F::one() {
            return Err(Error::InvalidConfig(
                "CRRA gamma = 1 is the Log family; use it instead".to_string(),
            ));
        }
        Ok(UtilitySpec::Crra { gamma })
    }

    /// u(c) and u'(c).
    pub fn eval(&self, c: F) -> Result<PointEval<F>> {
        check_positive("consumption", c)?;
        Ok(match *self {
            UtilitySpec::Log => PointEval {
                utility: c.ln(),
                marginal: c.recip(),
            },
            UtilitySpec::Crra { gamma } => PointEval {
                utility: c.powf(F::one() - gamma) / (F::one() - gamma),
                marginal: c.powf(-gamma),
            },
        })
    }

    /// (u')⁻¹: the consumption level with marginal utility `y`.
    pub fn marginal_inverse(&self, y: F) -> Result<F> {
        check_positive("marginal utility", y)?;
        Ok(match *self {
            UtilitySpec::Log => y.recip(),
            UtilitySpec::Crra { gamma } => y.powf(-gamma.recip()),
        })
    }

    /// Full-insurance consumption at weight λ: the c solving u'(c) = 1/λ.
    pub fn full_insurance_consumption(&self, lambda: F) -> Result<F> {
        check_positive("lambda", lambda)?;
        Ok(match *self {
            UtilitySpec::Log => lambda,
            UtilitySpec::Crra { gamma } => lambda.powf(gamma.recip()),
        })
    }

    /// v̄₁(λ) = u(full-insurance consumption at λ); strictly increasing in λ.
    pub fn full_insurance_value(&self, lambda: F) -> Result<F> {
        check_positive("lambda", lambda)?;
        Ok(match *self {
            UtilitySpec::Log => lambda.ln(),
            UtilitySpec::Crra { gamma } => {
                lambda.powf((F::one() - gamma) / gamma) / (F::one() - gamma)
            }
        })
    }

    /// v̄₁⁻¹: the weight delivering full-insurance value `v`.
    ///
    /// Errors with [`Error::Range`] when no weight attains `v`, which is the
    /// signal the mechanism uses to flag an infeasible continuation value.
    pub fn weight_for_value(&self, v: F) -> Result<F> {
        let range = self.value_range();
        if !range.contains(v) {
            return Err(Error::Range {
                value: v.lossy(),
                range,
            });
        }
        Ok(match *self {
            UtilitySpec::Log => v.exp(),
            UtilitySpec::Crra { gamma } => {
                // v = λ^((1-γ)/γ) / (1-γ)  ⇒  λ = ((1-γ) v)^(γ/(1-γ))
                ((F::one() - gamma) * v).powf(gamma / (F::one() - gamma))
            }
        })
    }

    /// u⁻¹: the certainty-equivalent consumption for utility `v`.
    pub fn inverse(&self, v: F) -> Result<F> {
        let range = self.value_range();
        if !range.contains(v) {
            return Err(Error::Range {
                value: v.lossy(),
                range,
            });
        }
        Ok(match *self {
            UtilitySpec::Log => v.exp(),
            UtilitySpec::Crra { gamma } => {
                ((F::one() - gamma) * v).powf((F::one() - gamma).recip())
            }
        })
    }

    /// The range of u (equivalently of v̄₁) as an open interval.
    pub fn value_range(&self) -> ValueRange {
        match *self {
            UtilitySpec::Log => ValueRange::All,
            UtilitySpec::Crra { gamma } => {
                if gamma < F::one() {
                    ValueRange::Positive
                } else {
                    ValueRange::Negative
                }
            }
        }
    }

    /// Utility credited to a misreport that drives consumption to zero or
    /// below: `None` stands for -∞ (Log and CRRA γ > 1 diverge at 0⁺), while
    /// CRRA γ < 1 has the finite limit u(0) = 0.
    pub fn utility_at_zero_consumption(&self) -> Option<F> {
        match *self {
            UtilitySpec::Log => None,
            UtilitySpec::Crra { gamma } => {
                if gamma < F::one() {
                    Some(F::zero())
                } else {
                    None
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_at_one() {
        let u = UtilitySpec::<f64>::log();
        let p = u.eval(1.0).unwrap();
        assert_eq!(p.utility, 0.0);
        assert_eq!(p.marginal, 1.0);
    }

    #[test]
    fn nonpositive_consumption_is_domain_error() {
        let u = UtilitySpec::<f64>::log();
        assert!(matches!(u.eval(0.0), Err(Error::Domain { .. })));
        assert!(matches!(u.eval(-1.0), Err(Error::Domain { .. })));
        assert!(matches!(u.eval(f64::NAN), Err(Error::Domain { .. })));
    }

    #[test]
    fn marginal_inverse_log() {
        let u = UtilitySpec::<f64>::log();
        assert_eq!(u.marginal_inverse(0.5).unwrap(), 2.0);
        assert!(matches!(
            u.marginal_inverse(0.0),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn unit_weight_log() {
        let u = UtilitySpec::<f64>::log();
        assert_eq!(u.full_insurance_consumption(1.0).unwrap(), 1.0);
        assert_eq!(u.full_insurance_value(1.0).unwrap(), 0.0);
        assert_eq!(u.weight_for_value(0.0).unwrap(), 1.0);
    }

    #[test]
    fn crra_rejects_bad_gamma() {
        assert!(UtilitySpec::crra(0.0f64).is_err());
        assert!(UtilitySpec::crra(-2.0f64).is_err());
        assert!(UtilitySpec::crra(1.0f64).is_err());
        assert!(UtilitySpec::crra(f64::NAN).is_err());
        assert!(UtilitySpec::crra(2.0f64).is_ok());
    }

    #[test]
    fn crra_range_is_signed() {
        let lo = UtilitySpec::crra(0.5f64).unwrap();
        let hi = UtilitySpec::crra(2.0f64).unwrap();
        assert_eq!(lo.value_range(), ValueRange::Positive);
        assert_eq!(hi.value_range(), ValueRange::Negative);
        assert!(matches!(hi.weight_for_value(0.1), Err(Error::Range { .. })));
        assert!(matches!(lo.weight_for_value(-0.1), Err(Error::Range { .. })));
        assert!(!ValueRange::All.contains(f64::INFINITY));
    }

    #[test]
    fn zero_consumption_convention() {
        assert_eq!(
            UtilitySpec::<f64>::log().utility_at_zero_consumption(),
            None
        );
        assert_eq!(
            UtilitySpec::crra(2.0f64).unwrap().utility_at_zero_consumption(),
            None
        );
        assert_eq!(
            UtilitySpec::crra(0.5f64).unwrap().utility_at_zero_consumption(),
            Some(0.0)
        );
    }

    #[test]
    fn works_in_f32() {
        let u = UtilitySpec::<f32>::crra(2.0).unwrap();
        let lambda = 4.0f32;
        let v = u.full_insurance_value(lambda).unwrap();
        let back = u.weight_for_value(v).unwrap();
        assert!((back - lambda).abs() / lambda < 1e-5);
    }
}
