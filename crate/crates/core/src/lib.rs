//! Mutual insurance for unobservable income through martingale allocation
//! weights.
//!
//! A firm mediates transfers among a continuum of risk-averse individuals
//! whose income reports cannot be verified. Instead of carrying a promised
//! utility, the contract carries an allocation weight λ: consumption within
//! a period is the full-insurance level c*(λ) regardless of the report, and
//! truth telling is induced by moving tomorrow's weight with today's report
//! so that the contract values v̄₁(λ') form a mean-preserving spread of
//! v̄₁(λ). The cross-sectional mean value is then a constant of motion — no
//! immiseration drift — which is what the simulation and test surfaces here
//! measure.
//!
//! Module map:
//!
//! * [`utility`] — Log/CRRA families with exact inverses and the induced
//!   full-insurance value map.
//! * [`economy`] — income distribution, transfer rule, firm-side values,
//!   deviations, and deterministic per-agent income streams.
//! * [`mechanism`] — the weight recursion, incentive-compatibility
//!   verification, one-step residuals, firm-side one-step values, and a
//!   Neumann-series solver.
//! * [`simulation`] — Monte Carlo panel engine and cross-sectional
//!   statistics.
//! * [`baseline`] — promised-utility contract solved by value iteration,
//!   reproducing the immiseration drift for contrast.
//!
//! The numeric kernel is generic over the scalar type via [`Scalar`];
//! `f64` aliases for the main types are exported at the crate root.

pub mod baseline;
pub mod economy;
pub mod error;
pub mod mechanism;
pub mod scalar;
pub mod simulation;
pub mod utility;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use baseline::{BaselineModel, BaselineOptions, BaselineStats};
pub use economy::{DeviationScaling, IncomeDistribution, IncomeStreams, MechanismConfig};
pub use mechanism::{IcReport, LinearFixedPointProblem, NeumannSolution, WeightMap};
pub use simulation::{PanelRecord, PeriodStats, StatsReport};
pub use utility::{UtilitySpec, ValueRange};

/// Double-precision instantiations used by the CLI and most callers.
pub type UtilitySpec64 = utility::UtilitySpec<f64>;
pub type IncomeDistribution64 = economy::IncomeDistribution<f64>;
pub type MechanismConfig64 = economy::MechanismConfig<f64>;
pub type WeightMap64 = mechanism::WeightMap<f64>;
pub type PanelRecord64 = simulation::PanelRecord<f64>;
pub type StatsReport64 = simulation::StatsReport<f64>;
pub type BaselineModel64 = baseline::BaselineModel<f64>;
