//! Comma-separated trace files and the per-agent snapshot companion.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kmnet::{StateMatrix, Trace};

use crate::CliError;

pub const TRACE_HEADER: &str = "k,alpha_k,consensus_residual,fp_residual,dist_to_ref,selected_block";
pub const SNAPSHOT_HEADER: &str = "k,agent,coord_index,value";
const ABORT_PREFIX: &str = "# aborted at k=";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_trace(trace: &Trace) -> String {
    let mut out = String::with_capacity(trace.records.len() * 96);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.k,
            num(r.alpha_k),
            num(r.consensus_residual),
            num(r.fp_residual),
            r.dist_to_ref.map(num).unwrap_or_default(),
            r.selected_block.map(|q| q.to_string()).unwrap_or_default(),
        );
    }
    if let Some(k) = trace.aborted_at {
        let _ = writeln!(out, "{ABORT_PREFIX}{k}");
    }
    out
}

/// Snapshot rows for every record that carries one; `None` when there are none.
pub fn format_snapshots(trace: &Trace) -> Option<String> {
    let mut out = String::new();
    let mut any = false;
    for r in &trace.records {
        if let Some(s) = &r.state_snapshot {
            if !any {
                out.push_str(SNAPSHOT_HEADER);
                out.push('\n');
                any = true;
            }
            for (i, row) in s.rows().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    let _ = writeln!(out, "{},{i},{c},{}", r.k, num(*v));
                }
            }
        }
    }
    any.then_some(out)
}

/// `run.csv` → `run.snapshots.csv`
pub fn snapshot_path_for(trace_path: &Path) -> PathBuf {
    let stem = trace_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    trace_path.with_file_name(format!("{stem}.snapshots.csv"))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<(), CliError> {
    fs::write(path, format_trace(trace)).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    pub alpha_k: f64,
    pub consensus_residual: f64,
    pub fp_residual: f64,
    pub dist_to_ref: Option<f64>,
    pub selected_block: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub rows: Vec<TraceRow>,
    pub aborted_at: Option<u64>,
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: u64, name: &str) -> Result<Option<T>, CliError> {
    let raw = rec.get(idx).unwrap_or("").trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|_| CliError::Parse(format!("trace line {line}: column {name} has unparsable value {raw:?}")))
}

fn finite(v: Option<f64>, line: u64, name: &str) -> Result<Option<f64>, CliError> {
    match v {
        Some(x) if !x.is_finite() => Err(CliError::Parse(format!("trace line {line}: column {name} is not finite"))),
        other => Ok(other),
    }
}

fn required<T>(v: Option<T>, line: u64, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Parse(format!("trace line {line}: missing required column {name}")))
}

pub fn parse_trace(text: &str) -> Result<TraceFile, CliError> {
    let header = text.lines().next().unwrap_or("");
    if header.trim() != TRACE_HEADER {
        return Err(CliError::Parse(format!(
            "trace header must be `{TRACE_HEADER}`, found `{header}`"
        )));
    }
    let aborted_at = text
        .lines()
        .rev()
        .filter_map(|l| l.strip_prefix(ABORT_PREFIX))
        .map(|k| {
            k.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Parse(format!("malformed abort marker `{ABORT_PREFIX}{k}`")))
        })
        .next()
        .transpose()?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<TraceRow> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Parse(format!("trace: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let k = required(field::<u64>(&rec, 0, line, "k")?, line, "k")?;
        if let Some(prev) = rows.last() {
            if k <= prev.k {
                return Err(CliError::Parse(format!(
                    "trace line {line}: k = {k} does not increase (previous {})",
                    prev.k
                )));
            }
        }
        rows.push(TraceRow {
            k,
            alpha_k: required(finite(field(&rec, 1, line, "alpha_k")?, line, "alpha_k")?, line, "alpha_k")?,
            consensus_residual: required(
                finite(field(&rec, 2, line, "consensus_residual")?, line, "consensus_residual")?,
                line,
                "consensus_residual",
            )?,
            fp_residual: required(finite(field(&rec, 3, line, "fp_residual")?, line, "fp_residual")?, line, "fp_residual")?,
            dist_to_ref: finite(field(&rec, 4, line, "dist_to_ref")?, line, "dist_to_ref")?,
            selected_block: field(&rec, 5, line, "selected_block")?,
        });
    }
    Ok(TraceFile { rows, aborted_at })
}

pub fn read_trace(path: &Path) -> Result<TraceFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_trace(&text)
}

/// The last snapshot in a companion file, as `(k, states)`.
pub fn read_last_snapshot(path: &Path) -> Result<Option<(u64, StateMatrix)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| CliError::Parse(format!("snapshots: {e}")))?;
    if headers.iter().collect::<Vec<_>>().join(",") != SNAPSHOT_HEADER {
        return Err(CliError::Parse(format!("snapshot header must be `{SNAPSHOT_HEADER}`")));
    }
    let mut current: Option<(u64, Vec<Vec<f64>>)> = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Parse(format!("snapshots: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let k: u64 = required(field(&rec, 0, line, "k")?, line, "k")?;
        let agent: usize = required(field(&rec, 1, line, "agent")?, line, "agent")?;
        let coord: usize = required(field(&rec, 2, line, "coord_index")?, line, "coord_index")?;
        let value: f64 = required(field(&rec, 3, line, "value")?, line, "value")?;
        if current.as_ref().is_none_or(|(ck, _)| *ck != k) {
            current = Some((k, Vec::new()));
        }
        let rows = &mut current.as_mut().expect("just set").1;
        if rows.len() <= agent {
            rows.resize(agent + 1, Vec::new());
        }
        if rows[agent].len() != coord {
            return Err(CliError::Parse(format!("snapshots line {line}: coordinates out of order")));
        }
        rows[agent].push(value);
    }
    current
        .map(|(k, rows)| Ok((k, StateMatrix::from_rows(&rows)?)))
        .transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use kmnet::TraceRecord;

    fn rec(k: u64, block: Option<usize>, dist: Option<f64>) -> TraceRecord {
        TraceRecord {
            k,
            alpha_k: 1.0 / (k as f64 + 1.0),
            consensus_residual: 0.1 / (k as f64 + 1.0),
            fp_residual: 1e-3,
            dist_to_ref: dist,
            selected_block: block,
            max_agent_norm: 1.0,
            state_snapshot: None,
        }
    }

    #[test]
    fn round_trip_with_empty_fields() {
        let trace = Trace {
            records: vec![rec(0, None, Some(0.5)), rec(1, Some(2), Some(0.25)), rec(5, Some(0), None)],
            max_rounds: 5,
            aborted_at: None,
        };
        let text = format_trace(&trace);
        assert!(text.starts_with(TRACE_HEADER));
        assert!(text.lines().nth(1).unwrap().ends_with(","));
        let parsed = parse_trace(&text).unwrap();
        assert_eq!(parsed.rows.len(), 3);
        for (row, r) in parsed.rows.iter().zip(&trace.records) {
            assert_eq!(row.k, r.k);
            assert_eq!(row.alpha_k, r.alpha_k);
            assert_eq!(row.consensus_residual, r.consensus_residual);
            assert_eq!(row.dist_to_ref, r.dist_to_ref);
            assert_eq!(row.selected_block, r.selected_block);
        }
        assert_eq!(parsed.aborted_at, None);
    }

    #[test]
    fn numbers_carry_at_least_twelve_significant_digits() {
        let trace = Trace {
            records: vec![rec(2, None, None)],
            max_rounds: 2,
            aborted_at: None,
        };
        let text = format_trace(&trace);
        let alpha = text.lines().nth(1).unwrap().split(',').nth(1).unwrap();
        let mantissa = alpha.split('e').next().unwrap().replace(['.', '-'], "");
        assert!(mantissa.len() >= 12, "{alpha}");
    }

    #[test]
    fn abort_marker_round_trips() {
        let trace = Trace {
            records: vec![rec(0, None, None)],
            max_rounds: 10,
            aborted_at: Some(3),
        };
        let text = format_trace(&trace);
        assert!(text.trim_end().ends_with("# aborted at k=3"));
        assert_eq!(parse_trace(&text).unwrap().aborted_at, Some(3));
    }

    #[test]
    fn schema_violations_are_rejected() {
        assert!(parse_trace("k,alpha\n0,1\n").is_err());
        let bad = format!("{TRACE_HEADER}\n1,1,0,0,,\n1,1,0,0,,\n");
        assert!(parse_trace(&bad).is_err());
        let nan = format!("{TRACE_HEADER}\n0,NaN,0,0,,\n");
        assert!(parse_trace(&nan).is_err());
        let missing = format!("{TRACE_HEADER}\n0,1,,0,,\n");
        assert!(parse_trace(&missing).is_err());
    }

    #[test]
    fn snapshots_written_and_read_back() {
        let mut r0 = rec(0, None, None);
        r0.state_snapshot = Some(StateMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let mut r1 = rec(4, None, None);
        r1.state_snapshot = Some(StateMatrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.5]]).unwrap());
        let trace = Trace {
            records: vec![r0, r1],
            max_rounds: 4,
            aborted_at: None,
        };
        let text = format_snapshots(&trace).unwrap();
        assert_eq!(text.lines().count(), 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, text).unwrap();
        let (k, s) = read_last_snapshot(&path).unwrap().unwrap();
        assert_eq!(k, 4);
        assert_eq!(s.to_rows(), vec![vec![5.0, 6.0], vec![7.0, 8.5]]);

        assert!(format_snapshots(&Trace {
            records: vec![rec(0, None, None)],
            max_rounds: 0,
            aborted_at: None
        })
        .is_none());
        assert_eq!(snapshot_path_for(Path::new("out/run.csv")), Path::new("out/run.snapshots.csv"));
    }
}
