use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_gisot");

fn run(args: &[&str], out: &Path) -> (i32, Value) {
    let status = Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs");
    let summary = fs::read_to_string(out.join("summary.json")).expect("summary written");
    let summary: Value = serde_json::from_str(&summary).unwrap();
    validate(&summary);
    (status.status.code().unwrap(), summary)
}

fn validate(summary: &Value) {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas/summary.schema.json");
    let schema: Value = serde_json::from_str(&fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator
        .iter_errors(summary)
        .map(|e| e.to_string())
        .collect();
    assert!(
        errors.is_empty(),
        "summary does not match schema: {errors:?}\n{summary:#}"
    );
}

fn metric(s: &Value, key: &str) -> f64 {
    s["metrics"][key]
        .as_f64()
        .unwrap_or_else(|| panic!("metric {key} missing in {s:#}"))
}

#[test]
fn missing_spec_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (code, s) = run(
        &["project", "--spec", "/definitely/not/here.json"],
        dir.path(),
    );
    assert_eq!(code, 1);
    assert_eq!(s["metrics"]["error_kind"], "invalid-input");
}

#[test]
fn malformed_spec_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    fs::write(&spec, r#"{"q": [0.5, 0.5], "blocks": "nope"}"#).unwrap();
    let (code, _) = run(
        &["project", "--spec", spec.to_str().unwrap()],
        &dir.path().join("out"),
    );
    assert_eq!(code, 1);
}

#[test]
fn unknown_fixture_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["moment-ot", "--fixture", "sphere"], dir.path()).0, 1);
}

#[test]
fn unreachable_tolerance_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, s) = run(
        &["project", "--tol", "1e-15", "--max-cycles", "1"],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert_eq!(s["converged"], false);
    assert_eq!(s["cycles"], 1);
}

#[test]
fn convex_order_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("mart.json");
    fs::write(
        &spec,
        r#"{"grid":[0,1,2],"mu":[0.1,0.8,0.1],"nu":[0,1,0],"epsilon":0.1}"#,
    )
    .unwrap();
    let (code, s) = run(
        &["martingale-ot", "--spec", spec.to_str().unwrap()],
        &dir.path().join("out"),
    );
    assert_eq!(code, 3);
    assert_eq!(s["metrics"]["error_kind"], "not-in-convex-order");
}

#[test]
fn fractional_conic_mass_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("conic.json");
    fs::write(
        &spec,
        r#"{"grid":[0,1],"mu":[0.7,0.6],"nu":[1,0.3],"epsilon":0.1}"#,
    )
    .unwrap();
    let (code, s) = run(
        &["unbalanced-ot", "--spec", spec.to_str().unwrap()],
        &dir.path().join("out"),
    );
    assert_eq!(code, 3);
    assert_eq!(s["metrics"]["error_kind"], "requires-rounding");
}

#[test]
fn triangle_fixture_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let (code, s) = run(&["project", "--fixture", "triangle"], dir.path());
    assert_eq!(code, 0);
    assert!(metric(&s, "oracle_distance") < 1e-6);
    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = traj.lines();
    assert_eq!(
        lines.next().unwrap(),
        "cycle,p0,p1,p2,r0,r1,r2,mass,max_violation"
    );
    assert_eq!(lines.count(), 100);
}

#[test]
fn project_spec_matches_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("p.json");
    fs::write(
        &spec,
        r#"{"q":[0.5,0.1,0.4],"blocks":[{"kind":"gis","a":[[0.1,0.5,0.4]],"b":[0.42]}]}"#,
    )
    .unwrap();
    let (code, s) = run(
        &[
            "project",
            "--spec",
            spec.to_str().unwrap(),
            "--format",
            "json",
        ],
        &dir.path().join("o"),
    );
    assert_eq!(code, 0);
    assert!(metric(&s, "oracle_distance") < 1e-9);
    assert!(dir.path().join("o/trajectory.json").exists());
}

#[test]
fn interval_moment_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (code, s) = run(&["moment-ot", "--fixture", "interval"], dir.path());
    assert_eq!(code, 0);
    assert!((metric(&s, "mean") - 0.5).abs() < 1e-6);
    assert!((metric(&s, "second_moment") - 0.2725).abs() < 1e-6);
    assert_eq!(s["metrics"]["kernel"], "toeplitz-fft");
}

#[test]
fn curtain_martingale_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (code, s) = run(
        &["martingale-ot", "--fixture", "curtain", "--plans"],
        dir.path(),
    );
    assert_eq!(code, 0);
    assert!(s["max_violation"].as_f64().unwrap() <= 1e-5);
    assert!(s["metrics"]["max_clusters"].as_u64().unwrap() <= 2);
    assert!(dir.path().join("plan.csv").exists());
}

#[test]
fn curtain_weak_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (code, s) = run(
        &["weak-ot", "--fixture", "curtain", "--epsilon", "1e-10"],
        dir.path(),
    );
    assert_eq!(code, 0);
    assert!(metric(&s, "weak_cost") < 1e-6);
    assert!(metric(&s, "jensen_gap") >= -1e-10);
}

#[test]
fn unbalanced_fixture_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (code, s) = run(&["unbalanced-ot"], dir.path());
    assert_eq!(code, 0);
    assert!(metric(&s, "source_residual") < 1e-6);
    assert!(metric(&s, "target_residual") < 1e-6);
    let header = fs::read_to_string(dir.path().join("coupling.csv")).unwrap();
    assert!(header.starts_with("i,k,j,l,mass\n"));
}

#[test]
fn block_study_single_cell_is_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "block-study",
        "--epsilons",
        "0.1",
        "--sizes",
        "16",
        "--trials",
        "3",
    ];
    let (code, s) = run(&args, dir.path());
    assert_eq!(code, 0);
    assert_eq!(s["metrics"]["cells"], 1);
    let csv = fs::read_to_string(dir.path().join("study.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn seeded_block_study_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "block-study",
        "--epsilons",
        "0.05,0.1",
        "--sizes",
        "12,20",
        "--trials",
        "4",
        "--seed",
        "7",
    ];
    run(&args, a.path());
    run(&args, b.path());
    for f in ["study.csv", "study.json", "summary.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let c = tempfile::tempdir().unwrap();
    let other = [
        "block-study",
        "--epsilons",
        "0.05,0.1",
        "--sizes",
        "12,20",
        "--trials",
        "4",
        "--seed",
        "8",
    ];
    run(&other, c.path());
    assert_ne!(
        fs::read(a.path().join("study.csv")).unwrap(),
        fs::read(c.path().join("study.csv")).unwrap()
    );
}

#[test]
fn fixture_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&["unbalanced-ot", "--layout", "split"], a.path());
    run(&["unbalanced-ot", "--layout", "split"], b.path());
    for f in ["coupling.csv", "trace.csv", "summary.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn torus_spec_uses_the_circulant_path() {
    let dir = tempfile::tempdir().unwrap();
    let m = 16;
    let period = 2.0;
    let grid: Vec<f64> = (0..m).map(|i| period * i as f64 / m as f64).collect();
    let mu: Vec<f64> = (0..m).map(|i| 1.0 + (i % 3) as f64).collect();
    let s: f64 = mu.iter().sum();
    let mu: Vec<f64> = mu.iter().map(|v| v / s).collect();
    let spec = serde_json::json!({
        "grid": grid,
        "mu": mu,
        "a": [grid.iter().map(|x| (std::f64::consts::PI * x).cos()).collect::<Vec<_>>()],
        "b": [0.1],
        "epsilon": 0.5,
        "geometry": {"type": "torus", "period": period}
    });
    let path = dir.path().join("t.json");
    fs::write(&path, spec.to_string()).unwrap();
    let (code, s) = run(
        &["moment-ot", "--spec", path.to_str().unwrap()],
        &dir.path().join("o"),
    );
    assert_eq!(code, 0);
    assert_eq!(s["metrics"]["kernel"], "circulant-fft");
    assert!(metric(&s, "moment_residual") <= 1e-9);
}
