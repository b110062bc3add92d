use std::path::Path;
use std::process::{Command, Output};

fn exitbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exitbound")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

/// Value printed after `label` on a `label   value` line.
fn field(text: &str, label: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(label)).unwrap_or_else(|| panic!("no `{label}` in {text}"));
    line[label.len()..].trim().parse().unwrap()
}

const JORDAN: &str = r#"{
    "n": 2,
    "A": [-1.0, 3.0, 0.0, -1.0],
    "region": {"box": {"lo": [-2, -1], "hi": [2, 1]}},
    "x0": [1.0, 0.5]
}"#;

const UNIT: &str = r#"{
    "n": 1,
    "A": [-1.0],
    "region": {"box": {"lo": [1], "hi": [2]}},
    "x0": [2.0]
}"#;

#[test]
fn bound_prints_certificate_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let sys = write(dir.path(), "jordan.json", JORDAN);
    let cert = dir.path().join("cert.json");
    let out = exitbound(&["bound", "--system", &sys, "--g", "log", "--baseline", "--out", cert.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("model           In"));
    assert!(field(&text, "r") > 0.0);
    assert!(field(&text, "bound (x0)") <= field(&text, "bound (all x0)") + 1e-9);
    assert!(field(&text, "baseline (all)").is_finite());
    let json = std::fs::read_to_string(cert).unwrap();
    assert!(json.contains("\"model\""));
}

#[test]
fn bound_on_unit_interval_dominates_exit_time() {
    let dir = tempfile::tempdir().unwrap();
    let sys = write(dir.path(), "unit.json", UNIT);
    for g in ["one", "log"] {
        let out = exitbound(&["bound", "--system", &sys, "--g", g]);
        assert!(out.status.success());
        assert!(field(&stdout(&out), "bound (x0)") >= std::f64::consts::LN_2 - 1e-6);
    }
}

#[test]
fn oracle_reports_exit_time() {
    let dir = tempfile::tempdir().unwrap();
    let sys = write(dir.path(), "unit.json", UNIT);
    let trace = dir.path().join("trace.csv");
    let out = exitbound(&["oracle", "--system", &sys, "--horizon", "5", "--trace", trace.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    let t: f64 = text.split("t = ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((t - std::f64::consts::LN_2).abs() < 1e-8, "{text}");
    assert!(std::fs::read_to_string(trace).unwrap().lines().count() > 10);
}

#[test]
fn simulate_writes_trace_and_events() {
    let dir = tempfile::tempdir().unwrap();
    let sys = write(
        dir.path(),
        "switch.json",
        r#"{
            "n": 1,
            "modes": [
                {"A": [-1.0], "b": [3.0], "region": {"box": {"lo": [0], "hi": [2]}}},
                {"A": [-1.0], "b": [3.0], "region": {"box": {"lo": [2], "hi": [5]}}}
            ]
        }"#,
    );
    let trace = dir.path().join("trace.csv");
    let events = dir.path().join("events.csv");
    let out = exitbound(&[
        "simulate", "--system", &sys, "--x0", "0.5", "--horizon", "10",
        "--trace", trace.to_str().unwrap(), "--events", events.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ev = std::fs::read_to_string(events).unwrap();
    let lines: Vec<&str> = ev.lines().collect();
    assert_eq!(lines[0], "k,t_k,from_mode,to_mode");
    assert_eq!(lines.len(), 2);
    let t: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((t - 2.5f64.ln()).abs() < 1e-6);
    assert!(std::fs::read_to_string(trace).unwrap().starts_with("t,x1,mode"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(exitbound(&["bound", "--system", missing.to_str().unwrap()]).status.code(), Some(1));
    let bad = write(dir.path(), "bad.json", r#"{"n": 2, "A": [1.0]}"#);
    assert_eq!(exitbound(&["bound", "--system", &bad]).status.code(), Some(1));
    let unstable = write(
        dir.path(),
        "unstable.json",
        r#"{"n": 1, "A": [1.0], "region": {"box": {"lo": [-1], "hi": [1]}}}"#,
    );
    assert_eq!(exitbound(&["bound", "--system", &unstable, "--g", "log"]).status.code(), Some(1));
    let sys = write(dir.path(), "unit.json", UNIT);
    assert_eq!(exitbound(&["bound", "--system", &sys, "--model", "in"]).status.code(), Some(1));
    assert_eq!(exitbound(&["bench", "--count", "1", "--dim", "3", "--out-dir", dir.path().to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn bench_writes_all_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = exitbound(&[
        "bench", "--count", "2", "--dim", "2", "--seed", "3", "--out-dir", out_dir.to_str().unwrap(), "--svg",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["records.csv", "summary.csv", "scatter_caseI.csv", "scatter_caseII.csv", "scatter_caseI.svg"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
    let records = std::fs::read_to_string(out_dir.join("records.csv")).unwrap();
    assert!(records.starts_with("idx,case,kappa,bound_in_one,bound_in_log,bound_out_one,bound_out_log,baseline,t_star"));
    assert_eq!(records.lines().count(), 1 + 2 * 2);
}
