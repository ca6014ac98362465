//! Synchronous-round iteration engine: centralized KM, D-KM and D-BKM.
//!
//! A round is: mix with `A_k`, then update every agent from the mixed states,
//! then record. The only randomness after initialisation is the single block
//! draw per D-BKM round, taken outside the per-agent region, so results do not
//! depend on the execution policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diagnostics::{self, Trace, TraceRecord};
use crate::error::{ensure_len, Error};
use crate::graph::{self, GraphSchedule, WeightedDigraph};
use crate::linalg::{dist, norm};
use crate::operators::{check_nonexpansive, OperatorFamily, PointSampler};
use crate::par::{for_each_row, Execution};
use crate::state::StateMatrix;
use crate::stepsize::{check_stepsize_conditions, StepsizeSchedule};
use crate::validation::ValidationReport;

/// Any coordinate beyond this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Tolerance used by the sampled nonexpansiveness check before a run.
const RUN_NONEXPANSIVE_TOL: f64 = 1e-12;
const RUN_NONEXPANSIVE_PAIRS: usize = 100;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("assumption checks failed: {}", failed_names(.0))]
    Validation(Vec<ValidationReport>),

    #[error("agent {agent} left the finite region at round {round} (last finite round {last_finite_round})")]
    Diverged {
        round: u64,
        agent: usize,
        last_finite_round: u64,
        /// Records up to the last finite round.
        trace: Option<Box<Trace>>,
    },

    #[error(transparent)]
    Model(#[from] Error),
}

fn failed_names(reports: &[ValidationReport]) -> String {
    reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.check.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Categorical block distribution broadcast by the coordinator.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSelector {
    probabilities: Vec<f64>,
    cumulative: Vec<f64>,
}

impl BlockSelector {
    pub fn new(probabilities: Vec<f64>) -> Result<Self, Error> {
        if probabilities.is_empty() {
            return Err(Error::Empty("block selector"));
        }
        if let Some(l) = probabilities.iter().position(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::invalid(format!(
                "block probability {l} must be positive, got {}",
                probabilities[l]
            )));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("block probabilities sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let cumulative = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(BlockSelector {
            probabilities,
            cumulative,
        })
    }

    pub fn uniform(blocks: usize) -> Result<Self, Error> {
        if blocks == 0 {
            return Err(Error::Empty("block selector"));
        }
        Self::new(vec![1.0 / blocks as f64; blocks])
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn num_blocks(&self) -> usize {
        self.probabilities.len()
    }

    /// `p₀ = min_l p_l`
    pub fn min_probability(&self) -> f64 {
        self.probabilities.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_uniform(&self) -> bool {
        let target = 1.0 / self.num_blocks() as f64;
        self.probabilities.iter().all(|p| (p - target).abs() <= 1e-12)
    }
}

/// Draws one block index with probability `p_q`, advancing `rng` by one value.
pub fn draw_block<R: Rng + ?Sized>(selector: &BlockSelector, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let last = selector.cumulative.len() - 1;
    selector.cumulative[..last]
        .iter()
        .position(|&c| u < c)
        .unwrap_or(last)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Dkm,
    Dbkm(BlockSelector),
    /// Plain KM on the global operator, started from the mean initial state.
    CentralizedKm,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialStates {
    Explicit(StateMatrix),
    /// Independent uniform coordinates in `[lower, upper]`, seeded from the run seed.
    Uniform { lower: f64, upper: f64 },
}

impl Default for InitialStates {
    fn default() -> Self {
        InitialStates::Uniform {
            lower: -5.0,
            upper: 5.0,
        }
    }
}

impl InitialStates {
    pub fn materialize(&self, agents: usize, dim: usize, seed: u64) -> Result<StateMatrix, Error> {
        match self {
            InitialStates::Explicit(m) => {
                ensure_len("initial state rows", agents, m.agents())?;
                ensure_len("initial state columns", dim, m.dim())?;
                Ok(m.clone())
            }
            InitialStates::Uniform { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    return Err(Error::invalid(format!("initial box [{lower}, {upper}] is empty")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1);
                let rows: Vec<Vec<f64>> = (0..agents)
                    .map(|_| (0..dim).map(|_| rng.random_range(*lower..*upper)).collect())
                    .collect();
                StateMatrix::from_rows(&rows)
            }
        }
    }
}

/// Which rounds produce a trace record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Cadence {
    /// Every round below 1000, then every `⌈k/1000⌉`-th round.
    #[default]
    Default,
    Every(u64),
}

impl Cadence {
    pub fn records(self, k: u64) -> bool {
        match self {
            Cadence::Default => k < 1000 || k.is_multiple_of(k.div_ceil(1000)),
            Cadence::Every(n) => k.is_multiple_of(n.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceOptions {
    pub cadence: Cadence,
    /// Attach a full state snapshot every this many rounds.
    pub snapshot_every: Option<u64>,
    /// Reference solution for the distance column.
    pub reference: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub family: OperatorFamily,
    pub schedule: GraphSchedule,
    pub stepsize: StepsizeSchedule,
    pub mode: Mode,
    pub initial_states: InitialStates,
    pub max_rounds: u64,
    pub seed: u64,
    pub trace: TraceOptions,
    pub execution: Execution,
    pub skip_validation: bool,
}

impl RunConfig {
    pub fn new(family: OperatorFamily, schedule: GraphSchedule, stepsize: StepsizeSchedule) -> Self {
        RunConfig {
            family,
            schedule,
            stepsize,
            mode: Mode::Dkm,
            initial_states: InitialStates::default(),
            max_rounds: 1000,
            seed: 0,
            trace: TraceOptions::default(),
            execution: Execution::default(),
            skip_validation: false,
        }
    }

    pub fn agents(&self) -> usize {
        self.family.len()
    }

    /// Dimensional consistency across family, schedule, selector and initial states.
    pub fn check_dimensions(&self) -> Result<(), Error> {
        if self.mode != Mode::CentralizedKm {
            ensure_len("schedule agent count", self.family.len(), self.schedule.agents())?;
        }
        if let Mode::Dbkm(selector) = &self.mode {
            ensure_len(
                "selector block count",
                self.family.partition().num_blocks(),
                selector.num_blocks(),
            )?;
        }
        if let InitialStates::Explicit(m) = &self.initial_states {
            ensure_len("initial state rows", self.family.len(), m.agents())?;
            ensure_len("initial state columns", self.family.dim(), m.dim())?;
        }
        if let Some(r) = &self.trace.reference {
            ensure_len("reference solution", self.family.dim(), r.len())?;
        }
        if self.max_rounds == 0 {
            return Err(Error::invalid("max_rounds must be positive"));
        }
        Ok(())
    }
}

/// The assumption checks run before every simulation unless skipped.
pub fn validate_config(config: &RunConfig) -> Vec<ValidationReport> {
    let mut reports = Vec::new();
    if config.mode != Mode::CentralizedKm {
        reports.push(graph::check_schedule_doubly_stochastic(
            &config.schedule,
            graph::STOCHASTIC_TOLERANCE,
        ));
        reports.push(graph::check_weights_rule(&config.schedule));
        reports.push(graph::check_q_strong_connectivity(&config.schedule));
    }
    reports.push(check_stepsize_conditions(&config.stepsize).to_report());

    let mut nonexp = ValidationReport::new("local operators nonexpansive");
    let mut sampler = PointSampler::standard(config.family.dim(), config.seed);
    for (i, op) in config.family.locals().iter().enumerate() {
        let r = check_nonexpansive(op, &mut sampler, RUN_NONEXPANSIVE_PAIRS, RUN_NONEXPANSIVE_TOL);
        if !r.passed() {
            nonexp.fail(format!("agent {i}: {} of {} pairs violate", r.violations.len(), r.pairs_checked));
        }
    }
    reports.push(nonexp);
    reports
}

/// Round index, agent states, and the coordinator's generator.
#[derive(Debug, Clone)]
pub struct RunState {
    k: u64,
    states: StateMatrix,
    rng: ChaCha8Rng,
    mixed: StateMatrix,
}

impl RunState {
    pub fn new(states: StateMatrix, seed: u64) -> Self {
        let mixed = states.clone();
        RunState {
            k: 0,
            states,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mixed,
        }
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn states(&self) -> &StateMatrix {
        &self.states
    }

    fn guard(&self) -> Result<(), RunError> {
        let dim = self.states.dim();
        match self
            .states
            .as_slice()
            .iter()
            .position(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        {
            None => Ok(()),
            Some(idx) => Err(RunError::Diverged {
                round: self.k,
                agent: idx / dim,
                last_finite_round: self.k.saturating_sub(1),
                trace: None,
            }),
        }
    }
}

fn check_step_inputs(state: &RunState, graph: &WeightedDigraph, family: &OperatorFamily) -> Result<(), Error> {
    ensure_len("graph agent count", state.states.agents(), graph.agents())?;
    ensure_len("family size", state.states.agents(), family.len())?;
    ensure_len("state dimension", family.dim(), state.states.dim())?;
    Ok(())
}

/// One D-KM round: `x̂ = A_k x`, then `x_i ← x̂_i + α_k (F_i(x̂_i) − x̂_i)`.
pub fn dkm_step(
    state: &mut RunState,
    graph: &WeightedDigraph,
    family: &OperatorFamily,
    alpha: f64,
    exec: Execution,
) -> Result<(), RunError> {
    check_step_inputs(state, graph, family)?;
    let dim = state.states.dim();
    graph::mix_into(graph, &state.states, &mut state.mixed, exec);
    let mixed = &state.mixed;
    let locals = family.locals();
    for_each_row(exec, state.states.as_mut_slice(), dim, |i, row| {
        let xh = mixed.row(i);
        locals[i].apply_range(xh, 0..dim, row);
        for (r, x) in row.iter_mut().zip(xh) {
            *r = x + alpha * (*r - x);
        }
    });
    state.k += 1;
    state.guard()
}

/// One D-BKM round. A single block `q` is drawn and used by every agent;
/// only block `q` of each local operator is evaluated, the other blocks keep
/// their mixed values. Returns `q`.
pub fn dbkm_step(
    state: &mut RunState,
    graph: &WeightedDigraph,
    family: &OperatorFamily,
    alpha: f64,
    selector: &BlockSelector,
    exec: Execution,
) -> Result<usize, RunError> {
    check_step_inputs(state, graph, family)?;
    ensure_len(
        "selector block count",
        family.partition().num_blocks(),
        selector.num_blocks(),
    )?;
    let dim = state.states.dim();
    graph::mix_into(graph, &state.states, &mut state.mixed, exec);
    let q = draw_block(selector, &mut state.rng);
    let range = family.partition().range(q)?;
    let mixed = &state.mixed;
    let locals = family.locals();
    for_each_row(exec, state.states.as_mut_slice(), dim, |i, row| {
        let xh = mixed.row(i);
        row.copy_from_slice(xh);
        locals[i].apply_range(xh, range.clone(), &mut row[range.clone()]);
        for j in range.clone() {
            row[j] = xh[j] + alpha * (row[j] - xh[j]);
        }
    });
    state.k += 1;
    state.guard()?;
    Ok(q)
}

fn km_update(family: &OperatorFamily, x: &mut [f64], alpha: f64) {
    let fx = family.global_apply(x);
    for (xi, fi) in x.iter_mut().zip(&fx) {
        *xi = *xi + alpha * (fi - *xi);
    }
}

/// Centralized KM `x_{k+1} = x_k + α_k (F(x_k) − x_k)`; returns `x_0 ..= x_rounds`.
pub fn centralized_km(
    family: &OperatorFamily,
    x0: &[f64],
    stepsize: &StepsizeSchedule,
    rounds: u64,
) -> Result<Vec<Vec<f64>>, RunError> {
    family.global_evaluate(x0)?;
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(rounds as usize + 1);
    out.push(x.clone());
    for k in 0..rounds {
        km_update(family, &mut x, stepsize.alpha(k));
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(RunError::Diverged {
                round: k + 1,
                agent: 0,
                last_finite_round: k,
                trace: None,
            });
        }
        out.push(x.clone());
    }
    Ok(out)
}

fn make_record(config: &RunConfig, state: &RunState, selected_block: Option<usize>, snapshot: bool) -> TraceRecord {
    let states = &state.states;
    let mean = diagnostics::mean_state(states);
    let fx = config.family.global_apply(&mean);
    TraceRecord {
        k: state.k,
        alpha_k: config.stepsize.alpha(state.k),
        consensus_residual: diagnostics::consensus_residual(states),
        fp_residual: dist(&fx, &mean),
        dist_to_ref: config
            .trace
            .reference
            .as_ref()
            .map(|r| states.rows().map(|row| dist(row, r)).fold(0.0, f64::max)),
        selected_block,
        max_agent_norm: states.rows().map(norm).fold(0.0, f64::max),
        state_snapshot: snapshot.then(|| states.clone()),
    }
}

/// Executes the configured mode for `max_rounds` rounds.
///
/// Equal `(config, seed)` always yields an identical trace, independent of
/// the execution policy.
pub fn run(config: &RunConfig) -> Result<Trace, RunError> {
    config.check_dimensions()?;
    if !config.skip_validation {
        let reports = validate_config(config);
        if reports.iter().any(|r| !r.passed) {
            return Err(RunError::Validation(reports));
        }
    }

    let agents = config.family.len();
    let dim = config.family.dim();
    let initial = config.initial_states.materialize(agents, dim, config.seed)?;
    let initial = match config.mode {
        Mode::CentralizedKm => StateMatrix::replicated(1, &diagnostics::mean_state(&initial)),
        _ => initial,
    };

    let mut state = RunState::new(initial, config.seed);
    let mut trace = Trace {
        records: Vec::new(),
        max_rounds: config.max_rounds,
        aborted_at: None,
    };

    let snapshot_due = |k: u64| config.trace.snapshot_every.is_some_and(|e| k.is_multiple_of(e.max(1)));
    if let Err(err) = state.guard() {
        trace.aborted_at = Some(0);
        return Err(attach_trace(err, trace));
    }
    trace.records.push(make_record(config, &state, None, snapshot_due(0)));

    for k in 0..config.max_rounds {
        let alpha = config.stepsize.alpha(k);
        let step = match &config.mode {
            Mode::Dkm => dkm_step(&mut state, config.schedule.at(k), &config.family, alpha, config.execution).map(|_| None),
            Mode::Dbkm(selector) => dbkm_step(
                &mut state,
                config.schedule.at(k),
                &config.family,
                alpha,
                selector,
                config.execution,
            )
            .map(Some),
            Mode::CentralizedKm => {
                km_update(&config.family, state.states.row_mut(0), alpha);
                state.k += 1;
                state.guard().map(|_| None)
            }
        };
        let selected = match step {
            Ok(q) => q,
            Err(err) => {
                trace.aborted_at = Some(state.k);
                return Err(attach_trace(err, trace));
            }
        };
        let kk = state.k;
        let snap = snapshot_due(kk);
        if config.trace.cadence.records(kk) || snap || kk == config.max_rounds {
            trace.records.push(make_record(config, &state, selected, snap));
        }
    }
    Ok(trace)
}

fn attach_trace(err: RunError, trace: Trace) -> RunError {
    match err {
        RunError::Diverged {
            round,
            agent,
            last_finite_round,
            ..
        } => RunError::Diverged {
            round,
            agent,
            last_finite_round,
            trace: Some(Box::new(trace)),
        },
        other => other,
    }
}
