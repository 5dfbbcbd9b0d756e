//! Monte Carlo panel engine for a finite approximation of the continuum of
//! agents, plus per-period cross-sectional statistics.
//!
//! Each agent starts at the common weight λ₀ and iterates
//! λ_t = λ'(λ_{t-1}, e_t) with independent income draws; one record is
//! emitted per agent-period for t = 0..=periods, so `periods` counts weight
//! transitions. Agents whose recursion becomes infeasible are censored from
//! that period on and counted, the rest of the panel continues.
//!
//! Agents are independent and simulated concurrently; the record stream is
//! delivered to the sink in ascending (agent, period) order regardless of
//! the execution interleaving, so a fixed seed yields a byte-identical
//! stream at any thread count.

use rayon::prelude::*;

use crate::economy::{
    sample_state, AgentIncomeStream, IncomeDistribution, IncomeStreams, MechanismConfig,
};
use crate::error::{Error, Result};
use crate::mechanism::next_weight;
use crate::scalar::{compensated_sum, Scalar};
use crate::utility::UtilitySpec;

/// One agent-period row of the panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelRecord<F> {
    pub period: u32,
    pub agent: u64,
    pub lambda: F,
    pub income: F,
    pub transfer: F,
    /// Always equals full-insurance consumption at `lambda`.
    pub consumption: F,
    /// v̄₁(lambda), the contract value carried by this agent.
    pub value: F,
}

/// An agent-period at which the weight recursion left the utility range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensorEvent<F> {
    pub agent: u64,
    /// First period with no record for this agent.
    pub period: u32,
    /// The income report that produced the infeasible continuation.
    pub income: F,
    /// The continuation value no weight can deliver.
    pub target_value: F,
}

/// Summary of a finished panel run.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelOutcome<F> {
    pub agents: u64,
    pub periods: u32,
    pub censored: Vec<CensorEvent<F>>,
}

/// Records of one agent's path, plus the event that cut it short, if any.
pub type AgentPath<F> = (Vec<PanelRecord<F>>, Option<CensorEvent<F>>);

/// Simulates one agent's path, pushing records for t = 0..=periods.
///
/// Returns the records together with the censor event, if the path was cut
/// short. Exposed so relabeling agents while relabeling their streams the
/// same way can be checked to permute the panel and nothing else.
pub fn agent_path<F: Scalar>(
    spec: &UtilitySpec<F>,
    cfg: &MechanismConfig<F>,
    dist: &IncomeDistribution<F>,
    periods: u32,
    stream: &mut AgentIncomeStream,
    agent: u64,
) -> Result<AgentPath<F>> {
    let mut records = Vec::with_capacity(periods as usize + 1);
    let mut lambda = cfg.lambda0();
    let mut censored = None;

    for t in 0..=periods {
        let state = sample_state(dist, stream);
        let income = dist.income(state);
        if t > 0 {
            match next_weight(spec, cfg, dist, lambda, state) {
                Ok(next) => lambda = next,
                Err(Error::Infeasible { value, .. }) => {
                    censored = Some(CensorEvent {
                        agent,
                        period: t,
                        income,
                        target_value: F::of(value),
                    });
                    break;
                }
                Err(other) => return Err(other),
            }
        }
        let consumption = spec.full_insurance_consumption(lambda)?;
        records.push(PanelRecord {
            period: t,
            agent,
            lambda,
            income,
            transfer: consumption - income,
            consumption,
            value: spec.full_insurance_value(lambda)?,
        });
    }
    Ok((records, censored))
}

/// Runs the panel, delivering every record to `sink` in ascending
/// (agent, period) order. Deterministic given the seed.
pub fn simulate_panel<F: Scalar>(
    spec: &UtilitySpec<F>,
    cfg: &MechanismConfig<F>,
    dist: &IncomeDistribution<F>,
    agents: u64,
    periods: u32,
    seed: u64,
    mut sink: impl FnMut(&PanelRecord<F>),
) -> Result<PanelOutcome<F>> {
    if agents == 0 {
        return Err(Error::Domain {
            what: "agents",
            value: 0.0,
            requires: "at least 1",
        });
    }
    if periods == 0 {
        return Err(Error::Domain {
            what: "periods",
            value: 0.0,
            requires: "at least 1",
        });
    }

    const CHUNK: u64 = 2048;
    let streams = IncomeStreams::new(seed);
    let mut censored = Vec::new();
    let mut start = 0u64;
    while start < agents {
        let end = agents.min(start + CHUNK);
        let chunk: Vec<Result<_>> = (start..end)
            .into_par_iter()
            .map(|agent| {
                let mut stream = streams.agent(agent);
                agent_path(spec, cfg, dist, periods, &mut stream, agent)
            })
            .collect();
        for item in chunk {
            let (records, censor) = item?;
            for record in &records {
                sink(record);
            }
            if let Some(event) = censor {
                censored.push(event);
            }
        }
        start = end;
    }
    if !censored.is_empty() {
        log::info!(
            "censored {} of {} agents (first at agent {} period {})",
            censored.len(),
            agents,
            censored[0].agent,
            censored[0].period
        );
    }
    Ok(PanelOutcome {
        agents,
        periods,
        censored,
    })
}

// ---------------------------------------------------------------------------
// Cross-sectional statistics
// ---------------------------------------------------------------------------

/// Cross-sectional statistics for one period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodStats<F> {
    pub t: u32,
    pub mean_value: F,
    /// Population variance of the contract value across surviving agents.
    pub var_value: F,
    pub mean_lambda: F,
    /// Spearman correlation of agents' value ranks between t−1 and t over
    /// agents alive in both periods; 1 by convention at t = 0 and whenever
    /// a side has no dispersion.
    pub rank_mobility: F,
    /// Agents with no record at this period (cumulative censor count).
    pub infeasible_count: u64,
}

/// Per-period statistics for a whole panel.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport<F> {
    pub agents: u64,
    pub periods: Vec<PeriodStats<F>>,
}

/// Streaming aggregator for panel records; order of arrival within a period
/// does not matter.
#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator<F> {
    buckets: Vec<Bucket<F>>,
}

#[derive(Debug, Clone)]
struct Bucket<F> {
    agents: Vec<u64>,
    values: Vec<F>,
    lambdas: Vec<F>,
}

impl<F> Default for Bucket<F> {
    fn default() -> Self {
        Self {
            agents: Vec::new(),
            values: Vec::new(),
            lambdas: Vec::new(),
        }
    }
}

impl<F: Scalar> StatsAccumulator<F> {
    pub fn new() -> Self {
        Self {
            buckets: Vec::new(),
        }
    }

    pub fn push(&mut self, record: &PanelRecord<F>) {
        let t = record.period as usize;
        if self.buckets.len() <= t {
            self.buckets.resize_with(t + 1, Bucket::default);
        }
        let bucket = &mut self.buckets[t];
        bucket.agents.push(record.agent);
        bucket.values.push(record.value);
        bucket.lambdas.push(record.lambda);
    }

    /// Finalizes the report. `total_agents` is the panel size censor counts
    /// are measured against.
    pub fn finish(mut self, total_agents: u64) -> Result<StatsReport<F>> {
        if self.buckets.is_empty() {
            return Err(Error::EmptyCrossSection { period: 0 });
        }
        // Sort each period by agent id so consecutive periods align.
        for bucket in &mut self.buckets {
            let mut order: Vec<usize> = (0..bucket.agents.len()).collect();
            order.sort_by_key(|&i| bucket.agents[i]);
            bucket.agents = order.iter().map(|&i| bucket.agents[i]).collect();
            bucket.values = order.iter().map(|&i| bucket.values[i]).collect();
            bucket.lambdas = order.iter().map(|&i| bucket.lambdas[i]).collect();
        }

        let mut periods = Vec::with_capacity(self.buckets.len());
        for t in 0..self.buckets.len() {
            let bucket = &self.buckets[t];
            if bucket.values.is_empty() {
                return Err(Error::EmptyCrossSection { period: t as u32 });
            }
            let (mean_value, var_value) = mean_and_variance(&bucket.values);
            let (mean_lambda, _) = mean_and_variance(&bucket.lambdas);
            let rank_mobility = if t == 0 {
                F::one()
            } else {
                let prev = &self.buckets[t - 1];
                let (a, b) = align(prev, bucket);
                spearman(&a, &b).unwrap_or_else(F::one)
            };
            periods.push(PeriodStats {
                t: t as u32,
                mean_value,
                var_value,
                mean_lambda,
                rank_mobility,
                infeasible_count: total_agents - bucket.values.len() as u64,
            });
        }
        Ok(StatsReport {
            agents: total_agents,
            periods,
        })
    }
}

/// Aggregates a complete record stream into per-period statistics. The
/// panel size is inferred from the period-0 cross-section.
pub fn cross_section_stats<F: Scalar>(
    records: impl IntoIterator<Item = PanelRecord<F>>,
) -> Result<StatsReport<F>> {
    let mut acc = StatsAccumulator::new();
    for record in records {
        acc.push(&record);
    }
    let total = acc.buckets.first().map_or(0, |b| b.values.len() as u64);
    acc.finish(total)
}

/// Mean and population variance; exact when all entries are identical.
pub(crate) fn mean_and_variance<F: Scalar>(values: &[F]) -> (F, F) {
    let n = F::of(values.len() as f64);
    let min = values.iter().cloned().fold(F::infinity(), F::min);
    let max = values.iter().cloned().fold(F::neg_infinity(), F::max);
    if min == max {
        return (min, F::zero());
    }
    let mean = compensated_sum(values.iter().copied()) / n;
    let var = compensated_sum(values.iter().map(|&v| (v - mean) * (v - mean))) / n;
    (mean, var)
}

/// Values of agents alive in both periods, aligned by agent id (both sides
/// sorted ascending).
fn align<F: Scalar>(prev: &Bucket<F>, curr: &Bucket<F>) -> (Vec<F>, Vec<F>) {
    let mut a = Vec::with_capacity(curr.values.len());
    let mut b = Vec::with_capacity(curr.values.len());
    let mut i = 0;
    for (j, &agent) in curr.agents.iter().enumerate() {
        while i < prev.agents.len() && prev.agents[i] < agent {
            i += 1;
        }
        if i < prev.agents.len() && prev.agents[i] == agent {
            a.push(prev.values[i]);
            b.push(curr.values[j]);
            i += 1;
        }
    }
    (a, b)
}

/// Ranks with ties averaged, 1-based.
fn average_ranks<F: Scalar>(values: &[F]) -> Vec<F> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut ranks = vec![F::zero(); n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = F::of((i + j) as f64 / 2.0 + 1.0);
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ties; `None` when either side has
/// no dispersion.
fn spearman<F: Scalar>(a: &[F], b: &[F]) -> Option<F> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = F::of(a.len() as f64);
    let ma = compensated_sum(ra.iter().copied()) / n;
    let mb = compensated_sum(rb.iter().copied()) / n;
    let cov = compensated_sum(ra.iter().zip(&rb).map(|(&x, &y)| (x - ma) * (y - mb)));
    let va = compensated_sum(ra.iter().map(|&x| (x - ma) * (x - ma)));
    let vb = compensated_sum(rb.iter().map(|&y| (y - mb) * (y - mb)));
    if va <= F::zero() || vb <= F::zero() {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economy::DeviationScaling;

    fn setup() -> (
        UtilitySpec<f64>,
        MechanismConfig<f64>,
        IncomeDistribution<f64>,
    ) {
        (
            UtilitySpec::log(),
            MechanismConfig::new(0.9, 1.0, DeviationScaling::Definition).unwrap(),
            IncomeDistribution::uniform(vec![0.5, 1.5]).unwrap(),
        )
    }

    #[test]
    fn degenerate_panel_is_constant() {
        let (spec, cfg, _) = setup();
        let dist = IncomeDistribution::uniform(vec![2.0]).unwrap();
        let mut records = Vec::new();
        let outcome =
            simulate_panel(&spec, &cfg, &dist, 5, 3, 11, |r| records.push(*r)).unwrap();
        assert!(outcome.censored.is_empty());
        assert_eq!(records.len(), 5 * 4);
        for r in &records {
            assert_eq!(r.lambda, 1.0);
            assert_eq!(r.transfer, 1.0 - 2.0);
            assert_eq!(r.consumption, 1.0);
        }
        let stats = cross_section_stats(records).unwrap();
        for p in &stats.periods {
            assert_eq!(p.var_value, 0.0);
            assert_eq!(p.rank_mobility, 1.0);
            assert_eq!(p.infeasible_count, 0);
        }
    }

    #[test]
    fn rejects_empty_panel_requests() {
        let (spec, cfg, dist) = setup();
        assert!(simulate_panel(&spec, &cfg, &dist, 0, 3, 1, |_| {}).is_err());
        assert!(simulate_panel(&spec, &cfg, &dist, 3, 0, 1, |_| {}).is_err());
    }

    #[test]
    fn reruns_are_identical() {
        let (spec, cfg, dist) = setup();
        let run = || {
            let mut records = Vec::new();
            simulate_panel(&spec, &cfg, &dist, 60, 12, 99, |r| records.push(*r)).unwrap();
            records
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn records_are_ordered_and_fully_insured() {
        let (spec, cfg, dist) = setup();
        let mut records = Vec::new();
        simulate_panel(&spec, &cfg, &dist, 17, 9, 5, |r| records.push(*r)).unwrap();
        for pair in records.windows(2) {
            assert!(
                (pair[0].agent, pair[0].period) < (pair[1].agent, pair[1].period),
                "records must arrive in (agent, period) order"
            );
        }
        for r in &records {
            let c_star = spec.full_insurance_consumption(r.lambda).unwrap();
            assert_eq!(r.consumption, c_star);
            assert_eq!(r.income + r.transfer, r.consumption);
        }
    }

    #[test]
    fn mean_value_at_zero_is_initial_value_exactly() {
        let (spec, cfg, dist) = setup();
        let mut records = Vec::new();
        simulate_panel(&spec, &cfg, &dist, 100, 4, 3, |r| records.push(*r)).unwrap();
        let stats = cross_section_stats(records).unwrap();
        assert_eq!(
            stats.periods[0].mean_value,
            spec.full_insurance_value(cfg.lambda0()).unwrap()
        );
        assert_eq!(stats.periods[0].var_value, 0.0);
    }

    #[test]
    fn spearman_hand_checked() {
        // Perfectly concordant and perfectly discordant rankings.
        let up = vec![1.0f64, 2.0, 3.0, 4.0];
        let down = vec![4.0f64, 3.0, 2.0, 1.0];
        assert_eq!(spearman(&up, &up), Some(1.0));
        assert_eq!(spearman(&up, &down), Some(-1.0));
        // One tie on the left: ranks (1.5, 1.5, 3) vs (1, 2, 3) gives
        // cov = 1.5, var_a = 1.5, var_b = 2 => rho = 1.5/sqrt(3).
        let tied = vec![1.0f64, 1.0, 5.0];
        let strict = vec![1.0f64, 2.0, 3.0];
        let rho = spearman(&tied, &strict).unwrap();
        assert!((rho - 1.5 / 3.0f64.sqrt()).abs() < 1e-15);
        // Degenerate side.
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn empty_stream_is_a_statistics_error() {
        let records: Vec<PanelRecord<f64>> = Vec::new();
        assert!(matches!(
            cross_section_stats(records),
            Err(Error::EmptyCrossSection { period: 0 })
        ));
    }
}
