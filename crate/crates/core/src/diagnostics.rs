//! Measurable quantities along a run: network mean, consensus and
//! fixed-point residuals, the probability-weighted block norm, the tail fit of
//! the consensus rate, and boundedness summaries.

use crate::engine::BlockSelector;
use crate::error::{ensure_len, Error, Result};
use crate::linalg::dist;
use crate::operators::{BlockPartition, OperatorFamily};
use crate::state::StateMatrix;
use crate::stepsize::StepsizeSchedule;

/// One recorded round. `selected_block` is the block drawn in the round that
/// produced this state (D-BKM only); `alpha_k` is the schedule value at `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: u64,
    pub alpha_k: f64,
    pub consensus_residual: f64,
    pub fp_residual: f64,
    pub dist_to_ref: Option<f64>,
    pub selected_block: Option<usize>,
    /// `max_i ‖x_i‖`
    pub max_agent_norm: f64,
    pub state_snapshot: Option<StateMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub max_rounds: u64,
    /// Round at which a divergence guard fired, if any.
    pub aborted_at: Option<u64>,
}

impl Trace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Record with the largest `k ≤ round`.
    pub fn at_or_before(&self, round: u64) -> Option<&TraceRecord> {
        self.records.iter().take_while(|r| r.k <= round).last()
    }
}

pub fn mean_state(states: &StateMatrix) -> Vec<f64> {
    let mut acc = states.row(0).to_vec();
    for row in states.rows().skip(1) {
        for (a, x) in acc.iter_mut().zip(row) {
            *a += x;
        }
    }
    let n = states.agents() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// `max_i ‖x_i − x̄‖`
pub fn consensus_residual(states: &StateMatrix) -> f64 {
    let mean = mean_state(states);
    states.rows().map(|row| dist(row, &mean)).fold(0.0, f64::max)
}

/// `‖F(x̄) − x̄‖`
pub fn fixed_point_residual(family: &OperatorFamily, mean: &[f64]) -> Result<f64> {
    let fx = family.global_evaluate(mean)?;
    Ok(dist(&fx, mean))
}

/// `sqrt(Σ_l ‖x_l‖² / p_l)`, sandwiched between `‖x‖` and `‖x‖/√p₀`.
pub fn weighted_block_norm(x: &[f64], partition: &BlockPartition, selector: &BlockSelector) -> Result<f64> {
    ensure_len("weighted norm input", partition.dim(), x.len())?;
    ensure_len("weighted norm blocks", partition.num_blocks(), selector.num_blocks())?;
    let mut total = 0.0;
    for (l, p) in selector.probabilities().iter().enumerate() {
        let block = &x[partition.range(l)?];
        total += block.iter().map(|v| v * v).sum::<f64>() / p;
    }
    Ok(total.sqrt())
}

/// `max_i ‖x_i − x*‖`
pub fn distance_to_reference(states: &StateMatrix, reference: &[f64]) -> Result<f64> {
    ensure_len("reference solution", states.dim(), reference.len())?;
    Ok(states.rows().map(|row| dist(row, reference)).fold(0.0, f64::max))
}

/// Tail supremum of `consensus_residual(k) / α_⌊k/2⌋` over records with `k ≥ tail_start`.
pub fn fit_consensus_rate(trace: &Trace, stepsize: &StepsizeSchedule, tail_start: u64) -> Result<f64> {
    fit_consensus_rate_records(&trace.records, stepsize, tail_start)
}

pub fn fit_consensus_rate_records(
    records: &[TraceRecord],
    stepsize: &StepsizeSchedule,
    tail_start: u64,
) -> Result<f64> {
    records
        .iter()
        .filter(|r| r.k >= tail_start)
        .map(|r| r.consensus_residual / stepsize.alpha_half(r.k))
        .reduce(f64::max)
        .ok_or(Error::Empty("tail"))
}

/// Fitted constants at `tail_start` and `2·tail_start`, and their relative change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateStability {
    pub at_start: f64,
    pub at_double: f64,
    pub relative_change: f64,
}

pub fn consensus_rate_stability(trace: &Trace, stepsize: &StepsizeSchedule, tail_start: u64) -> Result<RateStability> {
    let at_start = fit_consensus_rate(trace, stepsize, tail_start)?;
    let at_double = fit_consensus_rate(trace, stepsize, 2 * tail_start)?;
    let scale = at_start.max(at_double);
    let relative_change = if scale == 0.0 {
        0.0
    } else {
        (at_start - at_double).abs() / scale
    };
    Ok(RateStability {
        at_start,
        at_double,
        relative_change,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Boundedness {
    /// Round of the reference record (the last record at or before `max_rounds/10`).
    pub burn_in_round: u64,
    pub burn_in_norm: f64,
    /// Largest `max_i ‖x_i‖` over records at or after the burn-in round.
    pub worst_after_burn_in: f64,
    /// Largest `max_i ‖x_i‖` over all records.
    pub worst_overall: f64,
}

impl Boundedness {
    /// Whether nothing past the burn-in exceeds `factor` times the burn-in norm.
    pub fn within(&self, factor: f64) -> bool {
        self.worst_overall.is_finite() && self.worst_after_burn_in <= factor * self.burn_in_norm
    }
}

pub fn boundedness(trace: &Trace) -> Result<Boundedness> {
    let burn_in = trace
        .at_or_before(trace.max_rounds / 10)
        .ok_or(Error::Empty("trace"))?;
    let worst_after_burn_in = trace
        .records
        .iter()
        .filter(|r| r.k >= burn_in.k)
        .map(|r| r.max_agent_norm)
        .fold(0.0, f64::max);
    let worst_overall = trace.records.iter().map(|r| r.max_agent_norm).fold(0.0, f64::max);
    Ok(Boundedness {
        burn_in_round: burn_in.k,
        burn_in_norm: burn_in.max_agent_norm,
        worst_after_burn_in,
        worst_overall,
    })
}

/// `min` of `fp_residual` over the last 10% of records divided by the global minimum.
///
/// A vanishing residual keeps this ratio near 1.
pub fn fp_residual_tail_ratio(trace: &Trace) -> Result<f64> {
    let n = trace.records.len();
    if n == 0 {
        return Err(Error::Empty("trace"));
    }
    let tail_len = (n / 10).max(1);
    let tail_min = trace.records[n - tail_len..]
        .iter()
        .map(|r| r.fp_residual)
        .fold(f64::INFINITY, f64::min);
    let global_min = trace.records.iter().map(|r| r.fp_residual).fold(f64::INFINITY, f64::min);
    Ok(if global_min == 0.0 {
        if tail_min == 0.0 { 1.0 } else { f64::INFINITY }
    } else {
        tail_min / global_min
    })
}
