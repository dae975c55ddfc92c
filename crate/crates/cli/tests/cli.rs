use std::path::Path;
use std::process::{Command, Output};

fn invekf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invekf"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn window(dir: &Path) -> String {
    let path = dir.join("window.toml");
    std::fs::write(&path, "replay.end = 30.0\n").unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn benchmark_smoke_writes_all_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = invekf(&["benchmark", "--runs", "10", "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let headers = [
        ("nees.csv", "step,filter,mean_nees"),
        ("rmse.csv", "step,filter,rmse,sigma3_bound"),
        ("summary.csv", "filter,mean_nees,mean_rmse,mean_nees_after_closure,runs,failed_runs"),
        ("audit.csv", "filter,kernel_max_residual,info_violation_count"),
    ];
    for (file, header) in headers {
        let text = std::fs::read_to_string(out.join(file)).unwrap();
        assert_eq!(text.lines().next(), Some(header));
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let nees: Vec<(String, f64)> = summary
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<_> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap())
        })
        .collect();
    let get = |name: &str| nees.iter().find(|(n, _)| n == name).unwrap().1;
    assert!(get("proposed") < get("standard"));
}

#[test]
fn seed_override_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    invekf(&["simulate", "--seed", "1", "--out", arg(&a)]);
    invekf(&["simulate", "--seed", "2", "--out", arg(&b)]);
    let read = |d: &Path| std::fs::read(d.join("trajectory.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn filter_selection_limits_the_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let o = invekf(&["benchmark", "--runs", "2", "--filters", "proposed", "--out", arg(&out)]);
    assert!(o.status.success());
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.lines().nth(1).unwrap().starts_with("proposed,"));
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let o = invekf(&["utias", "--dataset", arg(&missing), "--out", arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(arg(&missing)));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "sim.n_loops = \"many\"\n").unwrap();
    assert_eq!(invekf(&["benchmark", "--config", arg(&bad)]).status.code(), Some(2));
    assert_eq!(invekf(&["benchmark", "--filters", "kalman"]).status.code(), Some(2));
    assert_eq!(invekf(&["benchmark", "--filters", "proposed,proposed"]).status.code(), Some(2));
}

#[test]
fn missing_dataset_file_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(invekf(&["fixture", "--seed", "5", "--out", arg(&data)]).status.success());
    let victim = data.join("synthetic5").join("Robot2_Groundtruth.dat");
    std::fs::remove_file(&victim).unwrap();
    let o = invekf(&["utias", "--dataset", arg(&data.join("synthetic5")), "--out", arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(arg(&victim)));
}

#[test]
fn utias_replays_a_fixture_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = window(dir.path());
    let data = dir.path().join("data");
    assert!(invekf(&["fixture", "--seed", "6", "--out", arg(&data)]).status.success());
    let out = dir.path().join("u");
    let o = invekf(&["utias", "--dataset", arg(&data), "--config", &config, "--robots", "1,3", "--out", arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let by_robot = std::fs::read_to_string(out.join("synthetic6").join("rmse_by_robot.csv")).unwrap();
    let robots: Vec<_> = by_robot.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(robots, ["1", "3", "1", "3"]);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<_> = summary.lines().collect();
    assert_eq!(lines[0], "dataset,standard,proposed");
    assert!(lines[1].starts_with("synthetic6,"));
    assert!(lines[2].starts_with("average,"));
}

#[test]
fn audit_passes_and_catches_a_corrupted_jacobian() {
    let dir = tempfile::tempdir().unwrap();
    let config = window(dir.path());
    let o = invekf(&["audit", "--runs", "3", "--config", &config]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = String::from_utf8_lossy(&o.stdout);
    assert!(report.contains("violations (expected)"));

    let o = invekf(&["audit", "--runs", "3", "--config", &config, "--inject-fault", "0.05"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("REGRESSION"));
}
