use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptive-pt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_outputs_and_echoes_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = bin(&[
        "run",
        "--preset",
        "section41",
        "--seed",
        "7",
        "--iterations",
        "1000",
        "--thin",
        "5",
        "--output",
        path(&out),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    for f in [
        "samples.csv",
        "report.json",
        "ladder_trace.csv",
        "exchange.csv",
        "effective_config.toml",
        "occupancy.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["run"]["iterations"], 1000);
    assert_eq!(report["config"]["run"]["seed"], 7);
    let samples = fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().next(), Some("x1,x2"));
    assert_eq!(samples.lines().count(), 1 + 100);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("final ladder length"));
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    let res = bin(&[
        "run",
        "--preset",
        "section42",
        "--iterations",
        "400",
        "--thin",
        "2",
        "--seed",
        "5",
        "--output",
        path(&first),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let echo = first.join("effective_config.toml");
    let res = bin(&[
        "run",
        "--config",
        path(&echo),
        "--threads",
        "2",
        "--output",
        path(&second),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert_eq!(
        fs::read(first.join("samples.csv")).unwrap(),
        fs::read(second.join("samples.csv")).unwrap()
    );
}

#[test]
fn user_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(
        bin(&["run", "--config", path(&missing)]).status.code(),
        Some(1)
    );
    assert_eq!(bin(&["run"]).status.code(), Some(1));
    assert_eq!(
        bin(&["run", "--preset", "section99"]).status.code(),
        Some(1)
    );
    assert_eq!(
        bin(&["run", "--preset", "section41", "--burn-in-frac", "1.5"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        bin(&["compare", "--preset", "section42", "--grid", "zeta:7"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        bin(&[
            "compare",
            "--preset",
            "section41",
            "--seeds",
            "2",
            "--output",
            path(dir.path())
        ])
        .status
        .code(),
        Some(1)
    );
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "this is = = not toml").unwrap();
    assert_eq!(bin(&["run", "--config", path(&bad)]).status.code(), Some(1));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}

#[test]
fn compare_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let res = bin(&[
        "compare",
        "--preset",
        "section42",
        "--iterations",
        "300",
        "--thin",
        "1",
        "--seeds",
        "2",
        "--grid",
        "zeta:1;L:-1..1",
        "--output",
        path(&out),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let table = fs::read_to_string(out.join("compare.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("kind,phi,mean_rmse,se_rmse,mean_exchange_ratio")
    );
    let kinds: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(kinds, vec!["adaptive", "zeta", "L", "L", "L"]);
}

#[test]
fn validate_passes_and_sign_flip_fails() {
    let ok = bin(&["validate"]);
    assert!(ok.status.success());
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
    let bad = bin(&["validate", "--inject-sign-flip"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL temperature fixed point"));
}
