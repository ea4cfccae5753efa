use std::process::{Command, Output};

fn ridgelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ridgelab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn field(csv: &str, column: &str) -> f64 {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let j = header.iter().position(|h| *h == column).unwrap();
    row[j].parse().unwrap()
}

#[test]
fn solve_m_isotropic() {
    let out = ridgelab(&[
        "solve-m",
        "--gamma",
        "2",
        "--spectrum",
        "pointmass:1",
        "--lambda",
        "0",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(field(&text, "m"), 1.0);
    let edge = (2f64.sqrt() - 1.0).powi(2);
    assert!((field(&text, "c0_effective") - edge).abs() < 1e-10);
}

#[test]
fn aligned_two_point_has_negative_optimum() {
    let out = ridgelab(&[
        "lambda-opt",
        "--recipe",
        "fig4-twopoint",
        "--alpha",
        "1",
        "--sigma2",
        "0",
    ]);
    assert!(out.status.success());
    assert!(field(&stdout(&out), "lambda_opt") < 0.0);
}

#[test]
fn json_output() {
    let out = ridgelab(&["risk-curve", "--lambda-grid", "0.5,1", "--format", "json"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.trim_start().starts_with('['));
    assert_eq!(text.matches("\"risk\"").count(), 2);
}

#[test]
fn exit_codes() {
    assert_eq!(
        ridgelab(&["solve-m", "--lambda", "-0.5"]).status.code(),
        Some(2)
    );
    assert_eq!(
        ridgelab(&["lambda-opt", "--gamma", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(ridgelab(&["bogus"]).status.code(), Some(1));
    assert_eq!(ridgelab(&["reproduce", "fig99"]).status.code(), Some(1));
    assert_eq!(
        ridgelab(&["risk-curve", "--lambda-grid", "1:0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        ridgelab(&["run", "/nonexistent/scenario.json"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(ridgelab(&["--help"]).status.code(), Some(0));
    let err = ridgelab(&["solve-m", "--lambda", "-0.5"]);
    assert!(String::from_utf8_lossy(&err.stderr).starts_with("error:"));
}

#[test]
fn domain_errors_are_rows_in_curves() {
    let out = ridgelab(&["risk-curve", "--lambda-grid", "-0.5,0.5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains(",domain"));
    assert!(text.contains(",ok"));
}

#[test]
fn simulate_is_deterministic() {
    let args = [
        "simulate",
        "--spectrum",
        "dc-dc",
        "--lambda-grid",
        "0.2,1",
        "--n",
        "40",
        "--replicates",
        "4",
        "--seed",
        "3",
    ];
    let a = ridgelab(&args);
    let b = ridgelab(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn run_scenario_file() {
    let dir = std::env::temp_dir().join(format!("ridgelab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("scenario.json");
    std::fs::write(
        &path,
        r#"{"name": "pcr", "spectrum": "ct-ct", "gamma": 2.0, "sigma2": 0.1, "sweep": "theta", "grid": "0.6:1:5"}"#,
    )
    .unwrap();
    let out_path = dir.join("out.csv");
    let out = ridgelab(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().count(), 6);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn selftest_passes() {
    let out = ridgelab(&["selftest"]);
    assert!(out.status.success());
    assert!(!stdout(&out).contains("FAIL"));
}
