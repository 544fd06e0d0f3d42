use std::path::Path;
use std::process::{Command, Output};

fn empc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_empc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_setup(dir: &Path) {
    std::fs::write(dir.join("small.toml"), "[horizon]\nsteps_n = 12\n\n[window]\ndays = 1\n").unwrap();
    let o = empc(&["synth", "--days", "1", "--lookahead-steps", "12", "--out", "data/pv_load.csv"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(empc(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(empc(&[], dir.path()).status.code(), Some(2));
    assert_eq!(empc(&["run", "--method", "choice9"], dir.path()).status.code(), Some(2));
    assert_eq!(empc(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn synth_writes_window_plus_lookahead() {
    let dir = tempfile::tempdir().unwrap();
    small_setup(dir.path());
    let text = std::fs::read_to_string(dir.path().join("data/pv_load.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 96 + 12);
    assert!(text.lines().nth(1).unwrap().starts_with("2024-01-01T00:00:00"));
    assert_eq!(empc(&["synth", "--days", "0", "--out", "x.csv"], dir.path()).status.code(), Some(1));
}

#[test]
fn run_writes_log_and_costs() {
    let dir = tempfile::tempdir().unwrap();
    small_setup(dir.path());
    let o = empc(
        &["run", "--config", "small.toml", "--data", "data/pv_load.csv", "--method", "choice2", "--out", "out"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Total"));
    let logs: Vec<_> = std::fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    let log = logs.iter().find(|n| n.ends_with("_log.csv")).expect("log written");
    let text = std::fs::read_to_string(dir.path().join("out").join(log)).unwrap();
    assert_eq!(text.lines().count(), 1 + 96);
    assert!(logs.iter().any(|n| n.ends_with("_cost.csv")));
    assert!(logs.iter().any(|n| n.ends_with("_cost.json")));
}

#[test]
fn compare_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    small_setup(dir.path());
    let base = ["--config", "small.toml", "--data", "data/pv_load.csv", "--out", "out"];
    let mut args = vec!["compare", "--methods", "std_ref,choice2", "--cases", "ii"];
    args.extend(base);
    let o = empc(&args, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("(ii) choice2"));
    let rows = std::fs::read_to_string(dir.path().join("out/compare.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);

    let mut args = vec!["oracle"];
    args.extend(base);
    let o = empc(&args, dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("oracle: "));
    assert!(dir.path().join("out/oracle_trajectory.csv").exists());
}

#[test]
fn check_reports_a_verdict() {
    let dir = tempfile::tempdir().unwrap();
    small_setup(dir.path());
    let base = ["--config", "small.toml", "--data", "data/pv_load.csv", "--out", "out"];
    let mut args = vec!["check", "--method", "choice1"];
    args.extend(base);
    let o = empc(&args, dir.path());
    let code = o.status.code().unwrap();
    assert!(code == 0 || code == 1, "{code}");
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert_eq!(code == 0, !text.contains("[FAIL]"));

    let mut args = vec!["check", "--method", "std_ref"];
    args.extend(base);
    let o = empc(&args, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("choice method"));
}

#[test]
fn bad_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[bess]\nsoc_min = 0.9\n").unwrap();
    let o = empc(&["oracle", "--config", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
    let o = empc(&["oracle", "--data", "missing.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}
