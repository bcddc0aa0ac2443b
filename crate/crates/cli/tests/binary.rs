use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use piflow_cli::config::Format;
use piflow_cli::io::{read_summary, read_trace};

fn piflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_piflow")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn qp_bench_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = piflow(&["qp-bench", "--seed", "2", "--n", "4", "--m", "3", "--out", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut traces: Vec<_> = fs::read_dir(d)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|f| f.starts_with("trace_"))
        .collect();
    traces.sort();
    assert_eq!(traces, ["trace_seed0002_pdgd.csv", "trace_seed0002_pi.csv"]);
    let summary = read_summary(Format::Csv, dir.path()).unwrap();
    assert_eq!(summary.records.len(), 2);
    for f in &traces {
        let t = read_trace(Format::Csv, &dir.path().join(f)).unwrap();
        assert!(!t.samples.is_empty());
    }
}

fn steps_and_residuals(dir: &Path, format: Format) -> Vec<(u64, usize, f64)> {
    read_summary(format, dir)
        .unwrap()
        .records
        .iter()
        .map(|r| (r.seed, r.accepted_steps, r.final_kkt))
        .collect()
}

#[test]
fn repeated_runs_agree_apart_from_wall_time() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = piflow(&[
            "qp-bench", "--seeds", "0..3", "--n", "6", "--m", "4", "--format", "json", "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(steps_and_residuals(a.path(), Format::Json), steps_and_residuals(b.path(), Format::Json));
    let ta = read_trace(Format::Json, &a.path().join("trace_seed0001_pi.json")).unwrap();
    let tb = read_trace(Format::Json, &b.path().join("trace_seed0001_pi.json")).unwrap();
    assert_eq!(ta.samples, tb.samples);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out_dir = dir.path().join("out");
    fs::write(
        &cfg,
        format!(
            r#"{{"experiment": "qp_bench", "seeds": [0, 1, 2], "n": 5, "m": 3, "out": {:?}}}"#,
            out_dir.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = piflow(&["--config", cfg.to_str().unwrap(), "qp-bench", "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_summary(Format::Csv, &out_dir).unwrap();
    assert!(summary.records.iter().all(|r| r.seed == 4));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&piflow(&["qp-bench", "--seed", "0", "--n", "3", "--m", "2", "--rho", "-1", "--out", d])), 2);
    assert_eq!(code(&piflow(&["solve", "--seed", "0", "--n", "3", "--m", "2", "--rel-tol", "0", "--out", d])), 2);
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"experiment": "qp_bench", "colour": 3}"#).unwrap();
    assert_eq!(code(&piflow(&["--config", cfg.to_str().unwrap(), "qp-bench"])), 2);
    fs::write(&cfg, r#"{"experiment": "sysid"}"#).unwrap();
    assert_eq!(code(&piflow(&["--config", cfg.to_str().unwrap(), "qp-bench"])), 2);
    assert_eq!(code(&piflow(&["solve", "--problem", "/nonexistent/problem.json", "--out", d])), 2);
}

#[test]
fn numerical_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    // a large negative proportional gain makes the PI flow blow up
    let out = piflow(&[
        "solve", "--seed", "0", "--n", "4", "--m", "3", "--flow", "pi", "--kp", "-50", "--t-final", "50", "--out", d,
    ]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn scalar_modes_and_rate_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = piflow(&["scalar-modes", "--out", d]);
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("scalar_modes.json").exists());
    let out = piflow(&["rate", "--seed", "1", "--n", "5", "--m", "3", "--kp", "0.1", "--out", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("rate.json").exists());
}

#[test]
fn solve_reads_problem_file() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("p.json");
    fs::write(&problem, r#"{"h": [[1.0]], "b": [0.0], "c": [[1.0]], "d": [-1.0]}"#).unwrap();
    let out = piflow(&[
        "solve", "--problem", problem.to_str().unwrap(), "--rel-tol", "1e-6", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sol: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("solution.json")).unwrap()).unwrap();
    let x = sol["x"][0].as_f64().unwrap();
    assert!((x + 1.0).abs() <= 1e-3, "{sol}");
}
