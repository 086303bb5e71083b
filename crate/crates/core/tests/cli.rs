use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smartho-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_outputs_and_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let ok = sim(&["run", "--out", arg(&out), "--mode", "both", "--tandem", "2", "--trace"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("improvement_pct:"));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("schema_version")).count(), 1);
    assert!(out.join("trace.log").exists());

    let again = sim(&["run", "--out", arg(&out)]);
    assert_eq!(again.status.code(), Some(1));
    assert!(sim(&["run", "--out", arg(&out), "--force"]).status.success());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = sim(&["run", "--out", arg(d), "--mode", "smartho", "--tandem", "3", "--load", "30", "--seed", "8"]);
        assert!(o.status.success());
    }
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\n  \"tandem\": ,\n}").unwrap();
    let o = sim(&["run", "--config", arg(&cfg), "--out", arg(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn sweep_resumes_after_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let base = ["sweep", "--out", arg(&out), "--tandem", "1,2", "--load", "0,20", "--reps", "2", "--no-forwarding"];
    assert!(sim(&base).status.success());
    let runs = out.join("runs.csv");
    let full = fs::read_to_string(&runs).unwrap();
    assert_eq!(full.lines().count(), 1 + 2 * 2 * 2 * 2);
    let kept: Vec<&str> = full.lines().take(5).collect();
    fs::write(&runs, kept.join("\n") + "\n").unwrap();
    let mut resume = base.to_vec();
    resume.push("--resume");
    assert!(sim(&resume).status.success());
    assert_eq!(fs::read_to_string(&runs).unwrap(), full);
    assert!(out.join("runs_ci.csv").exists());
}

#[test]
fn qmodel_prints_budget() {
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/qmodel_example.json");
    let o = sim(&["qmodel", "--config", cfg, "--t-mr-ms", "100"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().last().unwrap().starts_with("100.000000,"));
}

#[test]
fn wire_parse_reports_bad_hex() {
    assert_eq!(sim(&["wire-parse", "zz"]).status.code(), Some(1));
}
