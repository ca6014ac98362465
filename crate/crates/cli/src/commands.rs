//! The `validate`, `run`, `oracle`, `compare` and `show` commands.

use std::io::Write;
use std::path::{Path, PathBuf};

use kmnet::diagnostics::{distance_to_reference, fit_consensus_rate_records, fixed_point_residual, mean_state};
use kmnet::engine::validate_config;
use kmnet::operators::{estimate_displacement_bound, PointSampler};
use kmnet::{run, RunError, StepsizeSchedule, Trace, TraceRecord};

use crate::config::{ProblemSpec, ScenarioFile};
use crate::presets::preset;
use crate::trace_file::{self, TraceRow};
use crate::CliError;

const DISPLACEMENT_SAMPLES: usize = 1000;

fn io(e: std::io::Error) -> CliError {
    CliError::Io(e.to_string())
}

/// A preset name or a path to a scenario file.
pub fn resolve_scenario(arg: &str) -> Result<ScenarioFile, CliError> {
    match preset(arg) {
        Some(file) => Ok(file),
        None => ScenarioFile::load(Path::new(arg)),
    }
}

pub fn cmd_show(name: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let file = resolve_scenario(name)?;
    write!(out, "{}", file.to_toml()).map_err(io)
}

/// Prints one line per assumption check; fails with `Validation` if any fails.
pub fn cmd_validate(file: &ScenarioFile, out: &mut dyn Write) -> Result<(), CliError> {
    let mut scenario = file.build()?;
    let reports = validate_config(&scenario.config);
    for r in &reports {
        writeln!(out, "{r}").map_err(io)?;
    }
    let mut sampler = PointSampler::standard(scenario.config.family.dim(), scenario.config.seed);
    let bound = estimate_displacement_bound(&mut scenario.config.family, &mut sampler, DISPLACEMENT_SAMPLES);
    writeln!(
        out,
        "[INFO] displacement bound: sampled max_i ‖F_i(x) − x‖ = {bound:.6e} over {DISPLACEMENT_SAMPLES} points in [-10, 10]^n"
    )
    .map_err(io)?;
    if reports.iter().all(|r| r.passed) {
        writeln!(out, "all checks passed").map_err(io)?;
        Ok(())
    } else {
        Err(CliError::Validation(reports))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub skip_validate: bool,
    pub output: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub trace_path: PathBuf,
    pub snapshot_path: Option<PathBuf>,
    pub trace: Trace,
}

fn trace_path(file: &ScenarioFile, opts: &RunOptions) -> PathBuf {
    opts.output
        .clone()
        .or_else(|| file.output.trace.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", file.display_name())))
}

fn write_outputs(file: &ScenarioFile, path: &Path, trace: &Trace) -> Result<Option<PathBuf>, CliError> {
    trace_file::write_trace(path, trace)?;
    match trace_file::format_snapshots(trace) {
        Some(text) => {
            let snap = file
                .output
                .snapshots
                .as_ref()
                .map(PathBuf::from)
                .unwrap_or_else(|| trace_file::snapshot_path_for(path));
            std::fs::write(&snap, text).map_err(|e| CliError::Io(format!("{}: {e}", snap.display())))?;
            Ok(Some(snap))
        }
        None => Ok(None),
    }
}

/// Executes the scenario and writes the trace; a diverged run still leaves
/// its partial trace behind.
pub fn cmd_run(file: &ScenarioFile, opts: &RunOptions, out: &mut dyn Write) -> Result<RunOutcome, CliError> {
    let mut scenario = file.build()?;
    scenario.config.skip_validation = opts.skip_validate;
    let path = trace_path(file, opts);
    match run(&scenario.config) {
        Ok(trace) => {
            let snapshot_path = write_outputs(file, &path, &trace)?;
            if let Some(last) = trace.last() {
                writeln!(
                    out,
                    "k={} consensus_residual={:.6e} fp_residual={:.6e}{}",
                    last.k,
                    last.consensus_residual,
                    last.fp_residual,
                    last.dist_to_ref.map(|d| format!(" dist_to_ref={d:.6e}")).unwrap_or_default()
                )
                .map_err(io)?;
            }
            writeln!(out, "trace written to {}", path.display()).map_err(io)?;
            Ok(RunOutcome {
                trace_path: path,
                snapshot_path,
                trace,
            })
        }
        Err(RunError::Diverged {
            round,
            last_finite_round,
            trace,
            ..
        }) => {
            if let Some(trace) = trace {
                write_outputs(file, &path, &trace)?;
                writeln!(out, "partial trace written to {}", path.display()).map_err(io)?;
            }
            Err(CliError::Diverged {
                round,
                last_finite_round,
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.12e}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn cmd_oracle(file: &ScenarioFile, out: &mut dyn Write) -> Result<(), CliError> {
    let scenario = file.build()?;
    let (point, provenance) = match (&scenario.reference, &file.problem) {
        (Some(r), _) => (r.point.clone(), r.provenance.clone()),
        (None, ProblemSpec::Identity { .. }) => {
            let cfg = &scenario.config;
            let x0 = cfg.initial_states.materialize(cfg.agents(), cfg.family.dim(), cfg.seed)?;
            (
                mean_state(&x0),
                "every point is fixed; mean of the seeded initial states (the consensus limit)".to_string(),
            )
        }
        (None, _) => {
            return Err(CliError::NoOracle(format!(
                "scenario `{}` has no centralized oracle",
                scenario.name
            )))
        }
    };
    let residual = fixed_point_residual(&scenario.config.family, &point)?;
    writeln!(out, "x* = {}", fmt_vec(&point)).map_err(io)?;
    writeln!(out, "fp_residual = {residual:.6e}").map_err(io)?;
    writeln!(out, "oracle: {provenance}").map_err(io)?;
    if let Some(r) = &scenario.reference {
        if !r.unique {
            writeln!(out, "note: the solution set is not a single point").map_err(io)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub trace: PathBuf,
    /// Path to a file of numbers or an inline comma-separated list.
    pub reference: Option<String>,
    /// Scenario supplying the stepsize and, if needed, the reference.
    pub scenario: Option<String>,
    pub alpha0: f64,
    pub gamma: f64,
    pub k0: u64,
    /// Overrides the round count used for `tail_start = max_rounds / 10`.
    pub max_rounds: Option<u64>,
    pub max_dist: Option<f64>,
    pub max_rate: Option<f64>,
}

impl CompareOptions {
    pub fn new(trace: PathBuf) -> Self {
        CompareOptions {
            trace,
            reference: None,
            scenario: None,
            alpha0: 1.0,
            gamma: 0.7,
            k0: 1,
            max_rounds: None,
            max_dist: None,
            max_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub final_k: u64,
    pub final_dist: f64,
    pub final_consensus: f64,
    pub tail_start: u64,
    pub rate_constant: f64,
}

fn parse_reference(arg: &str) -> Result<Vec<f64>, CliError> {
    let text = match std::fs::read_to_string(arg) {
        Ok(t) => t,
        Err(_) => arg.to_string(),
    };
    text.split(|c: char| c == ',' || c.is_whitespace() || c == '[' || c == ']')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Parse(format!("reference entry {s:?} is not a number")))
        })
        .collect()
}

fn as_record(r: &TraceRow) -> TraceRecord {
    TraceRecord {
        k: r.k,
        alpha_k: r.alpha_k,
        consensus_residual: r.consensus_residual,
        fp_residual: r.fp_residual,
        dist_to_ref: r.dist_to_ref,
        selected_block: r.selected_block,
        max_agent_norm: 0.0,
        state_snapshot: None,
    }
}

pub fn cmd_compare(opts: &CompareOptions, out: &mut dyn Write) -> Result<CompareReport, CliError> {
    let parsed = trace_file::read_trace(&opts.trace)?;
    let scenario = opts
        .scenario
        .as_deref()
        .map(|s| resolve_scenario(s).and_then(|f| f.build()))
        .transpose()?;
    let stepsize = match &scenario {
        Some(s) => s.config.stepsize,
        None => StepsizeSchedule::power_law(opts.alpha0, opts.gamma, opts.k0)?,
    };
    let max_rounds = opts
        .max_rounds
        .unwrap_or_else(|| parsed.rows.last().map_or(0, |r| r.k));
    let tail_start = max_rounds / 10;
    let records: Vec<TraceRecord> = parsed.rows.iter().map(as_record).collect();
    let rate_constant =
        fit_consensus_rate_records(&records, &stepsize, tail_start).map_err(|_| CliError::EmptyTail(tail_start))?;
    let last = parsed.rows.last().expect("nonempty tail implies a last row");

    let explicit_ref = opts.reference.as_deref().map(parse_reference).transpose()?;
    let final_dist = match (last.dist_to_ref, &explicit_ref) {
        (Some(d), None) => d,
        _ => {
            let reference = explicit_ref
                .or_else(|| scenario.as_ref().and_then(|s| s.reference.as_ref()).map(|r| r.point.clone()))
                .ok_or_else(|| {
                    CliError::MissingColumns(
                        "trace has no dist_to_ref column; pass --reference or --scenario with an oracle".into(),
                    )
                })?;
            let snap_path = trace_file::snapshot_path_for(&opts.trace);
            if !snap_path.exists() {
                return Err(CliError::MissingColumns(format!(
                    "an explicit reference needs state snapshots, but {} does not exist",
                    snap_path.display()
                )));
            }
            let (k, states) = trace_file::read_last_snapshot(&snap_path)?
                .ok_or_else(|| CliError::MissingColumns("snapshot file has no rows".into()))?;
            if k != last.k {
                writeln!(out, "note: last snapshot is at k={k}, last trace row at k={}", last.k).map_err(io)?;
            }
            distance_to_reference(&states, &reference)?
        }
    };

    let report = CompareReport {
        final_k: last.k,
        final_dist,
        final_consensus: last.consensus_residual,
        tail_start,
        rate_constant,
    };
    writeln!(out, "final k = {}", report.final_k).map_err(io)?;
    writeln!(out, "final distance to reference = {:.6e}", report.final_dist).map_err(io)?;
    writeln!(out, "final consensus residual = {:.6e}", report.final_consensus).map_err(io)?;
    writeln!(
        out,
        "consensus rate constant C = max_(k ≥ {}) residual / α_⌊k/2⌋ = {:.6e}",
        report.tail_start, report.rate_constant
    )
    .map_err(io)?;
    if let Some(k) = parsed.aborted_at {
        writeln!(out, "note: trace was aborted at k={k}").map_err(io)?;
    }

    let mut failures = Vec::new();
    if let Some(t) = opts.max_dist {
        let ok = report.final_dist < t;
        writeln!(out, "[{}] final distance < {t:e}", if ok { "PASS" } else { "FAIL" }).map_err(io)?;
        if !ok {
            failures.push(format!("final distance {:.3e} ≥ {t:e}", report.final_dist));
        }
    }
    if let Some(t) = opts.max_rate {
        let ok = report.rate_constant < t;
        writeln!(out, "[{}] rate constant < {t:e}", if ok { "PASS" } else { "FAIL" }).map_err(io)?;
        if !ok {
            failures.push(format!("rate constant {:.3e} ≥ {t:e}", report.rate_constant));
        }
    }
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(CliError::Threshold(failures.join("; ")))
    }
}
