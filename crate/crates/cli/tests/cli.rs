#![allow(clippy::needless_range_loop)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kmnet::apps::random_linear_instance;
use kmnet_cli::trace_file::{parse_trace, read_trace};

fn kmnet(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmnet"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Dense Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn printed_point(out: &str) -> Vec<f64> {
    let line = out.lines().find(|l| l.starts_with("x* = ")).expect("x* line");
    line.trim_start_matches("x* = [")
        .trim_end_matches(']')
        .split(", ")
        .map(|v| v.parse().unwrap())
        .collect()
}

fn printed_residual(out: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix("fp_residual = "))
        .expect("residual line")
        .parse()
        .unwrap()
}

const IDENTITY_TOY: &str = r#"
[problem]
kind = "identity"
agents = 4
dim = 2

[graph]
kind = "ring"
period = 2

[stepsize]
gamma = 0.7

[run]
max_rounds = 300
seed = 5
"#;

#[test]
fn validate_preset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = kmnet(&["validate", "paper-dkm-6"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("all checks passed"));
    assert!(!out.contains("[FAIL]"));
    assert!(out.contains("displacement bound"));
}

#[test]
fn validate_flags_bad_gamma_and_bad_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let shown = stdout(&kmnet(&["show", "paper-dkm-6"], dir.path()));
    write(dir.path(), "g.toml", &shown.replace("gamma = 0.7", "gamma = 0.4"));
    let o = kmnet(&["validate", "g.toml"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("violated: Σ α_k α_⌊k/2⌋ < ∞"), "{}", stdout(&o));

    let explicit = r#"
[problem]
kind = "identity"
agents = 2
dim = 1

[graph]
kind = "explicit"
window = 1
weight_floor = 0.1
matrices = [[[0.5, 0.5], [0.5, 0.0]]]

[stepsize]
gamma = 0.7

[run]
max_rounds = 10
"#;
    write(dir.path(), "m.toml", explicit);
    let o = kmnet(&["validate", "m.toml"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("[FAIL] doubly stochastic weights"), "{}", stdout(&o));
}

#[test]
fn parse_failures_exit_with_their_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let typo = IDENTITY_TOY.replace("gamma = 0.7", "gama = 0.7");
    write(dir.path(), "t.toml", &typo);
    let o = kmnet(&["run", "t.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line") && err.contains("gama"), "{err}");
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec!["run", "paper-dbkm-100", "--max-rounds", "1500", "--seed", "4", "--snapshot-cadence", "500", "-o", out]
    };
    assert!(kmnet(&args("a.csv"), dir.path()).status.success());
    assert!(kmnet(&args("b.csv"), dir.path()).status.success());
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.snapshots.csv"), read("b.snapshots.csv"));
}

#[test]
fn seeds_change_block_draws_and_both_settle() {
    let dir = tempfile::tempdir().unwrap();
    for seed in ["7", "8"] {
        let out = format!("s{seed}.csv");
        let o = kmnet(&["run", "paper-dbkm-100", "--max-rounds", "3000", "--seed", seed, "-o", &out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = read_trace(&dir.path().join("s7.csv")).unwrap();
    let b = read_trace(&dir.path().join("s8.csv")).unwrap();
    let blocks = |t: &kmnet_cli::trace_file::TraceFile| t.rows.iter().map(|r| r.selected_block).collect::<Vec<_>>();
    assert_ne!(blocks(&a), blocks(&b));
    for t in [&a, &b] {
        assert!(t.rows.last().unwrap().fp_residual < t.rows[0].fp_residual);
    }
}

#[test]
fn trace_files_follow_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    assert!(kmnet(&["run", "paper-dkm-6", "--max-rounds", "5000", "-o", "t.csv"], dir.path()).status.success());
    let text = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "k,alpha_k,consensus_residual,fp_residual,dist_to_ref,selected_block");
    assert!(!text.contains("NaN") && !text.contains("inf"));
    let t = parse_trace(&text).unwrap();
    assert!(t.rows.windows(2).all(|w| w[0].k < w[1].k));
    assert_eq!(t.rows.last().unwrap().k, 5000);
    assert!(t.rows.iter().all(|r| r.selected_block.is_none() && r.dist_to_ref.is_some()));
}

#[test]
fn divergence_keeps_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let growing = r#"
[problem]
kind = "identity"
agents = 2
dim = 1

[graph]
kind = "explicit"
window = 1
weight_floor = 0.1
matrices = [[[1.5, 0.5], [0.5, 1.5]]]

[stepsize]
gamma = 0.7

[run]
max_rounds = 500

[output]
trace = "grow.csv"
cadence = 1
"#;
    write(dir.path(), "grow.toml", growing);
    let o = kmnet(&["run", "grow.toml"], dir.path());
    assert_eq!(o.status.code(), Some(3), "validation must stop this run first");

    let o = kmnet(&["run", "grow.toml", "--skip-validate"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("grow.csv")).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("# aborted at k="), "{last}");
    let t = parse_trace(&text).unwrap();
    let aborted = t.aborted_at.unwrap();
    assert!(aborted < 500 && t.rows.last().unwrap().k < aborted);
}

#[test]
fn linear_oracle_matches_direct_solve() {
    let dir = tempfile::tempdir().unwrap();
    let o = kmnet(&["oracle", "linear-random"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(printed_residual(&out) < 1e-10);

    let (ms, vs) = random_linear_instance(5, 4, 0.1, 0);
    let mut a = vec![vec![0.0; 4]; 4];
    let mut b = vec![0.0; 4];
    for (m, v) in ms.iter().zip(&vs) {
        for i in 0..4 {
            b[i] += v[i];
            for j in 0..4 {
                a[i][j] += m.get(i, j);
            }
        }
    }
    let x = solve(a, b);
    let got = printed_point(&out);
    for (g, e) in got.iter().zip(&x) {
        assert!((g - e).abs() < 1e-10 * (1.0 + e.abs()), "{got:?} vs {x:?}");
    }
}

#[test]
fn dgd_oracle_solves_normal_equations() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&kmnet(&["oracle", "dgd-quadratic"], dir.path()));
    assert!(out.contains("normal equations"));
    // Σ AᵢᵀAᵢ and Σ Aᵢᵀbᵢ for the preset's four objectives, by hand
    let a = vec![vec![3.0, 1.0, 1.0], vec![1.0, 4.0, -1.0], vec![1.0, -1.0, 7.0]];
    let b = vec![4.0, 3.0, 1.0];
    let x = solve(a, b);
    let got = printed_point(&out);
    for (g, e) in got.iter().zip(&x) {
        assert!((g - e).abs() < 1e-10, "{got:?} vs {x:?}");
    }
}

#[test]
fn identity_oracle_prints_initial_mean() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "id.toml", IDENTITY_TOY);
    let o = kmnet(&["oracle", "id.toml"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(printed_residual(&out), 0.0);
    let x0 = kmnet::InitialStates::default().materialize(4, 2, 5).unwrap();
    let mean = kmnet::diagnostics::mean_state(&x0);
    for (g, e) in printed_point(&out).iter().zip(&mean) {
        assert!((g - e).abs() < 1e-11);
    }
}

#[test]
fn compare_scores_converged_linear_run() {
    let dir = tempfile::tempdir().unwrap();
    assert!(kmnet(&["run", "linear-random", "-o", "lin.csv"], dir.path()).status.success());
    let o = kmnet(&["compare", "lin.csv", "--scenario", "linear-random", "--max-dist", "1e-3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("[PASS] final distance < 1e-3"));
}

#[test]
fn compare_with_reference_uses_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "id.toml", IDENTITY_TOY);
    let o = kmnet(&["run", "id.toml", "--snapshot-cadence", "100", "-o", "id.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let oracle = stdout(&kmnet(&["oracle", "id.toml"], dir.path()));
    let x = printed_point(&oracle);
    // `=` keeps a leading minus sign from being read as a flag
    let inline = format!("--reference={},{}", x[0], x[1]);
    let o = kmnet(&["compare", "id.csv", &inline, "--max-dist", "1e-6"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));

    fs::remove_file(dir.path().join("id.snapshots.csv")).unwrap();
    let o = kmnet(&["compare", "id.csv", &inline], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing columns"), "{}", stderr(&o));
    let o = kmnet(&["compare", "id.csv"], dir.path());
    assert!(stderr(&o).contains("no dist_to_ref column"), "{}", stderr(&o));
}

#[test]
fn compare_reports_bad_gamma_without_asserting_a_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let shown = stdout(&kmnet(&["show", "paper-dkm-6"], dir.path()));
    write(dir.path(), "g.toml", &shown.replace("gamma = 0.7", "gamma = 0.4"));
    let o = kmnet(&["run", "g.toml", "--skip-validate", "--max-rounds", "5000", "-o", "g.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = kmnet(&["compare", "g.csv", "--gamma", "0.4", "--max-dist", "1e-3"], dir.path());
    let out = stdout(&o);
    assert!(out.contains("final consensus residual"));
    assert!(out.contains("rate constant C"));
    assert!(matches!(o.status.code(), Some(0) | Some(1)));
}

#[test]
fn compare_rejects_empty_tail() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "e.csv", "k,alpha_k,consensus_residual,fp_residual,dist_to_ref,selected_block\n");
    let o = kmnet(&["compare", "e.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty tail"));
}

#[test]
fn shown_preset_runs_like_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let shown = stdout(&kmnet(&["show", "dgd-huber"], dir.path()));
    write(dir.path(), "h.toml", &shown);
    let run = |scenario: &str, out: &str| {
        let o = kmnet(&["run", scenario, "--max-rounds", "2000", "-o", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(dir.path().join(out)).unwrap()
    };
    assert_eq!(run("dgd-huber", "p.csv"), run("h.toml", "f.csv"));
}

#[test]
fn presets_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&kmnet(&["presets"], dir.path()));
    for name in ["paper-dkm-6", "paper-dbkm-100", "linear-random", "dgd-quadratic", "dgd-huber"] {
        assert!(out.lines().any(|l| l == name));
    }
}
