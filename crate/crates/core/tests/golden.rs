//! Pinned regressions on the synthetic data. Set `EMPC_BLESS=1` to rewrite
//! the files under `tests/golden/` after a deliberate change.

use std::path::PathBuf;

use microgrid_empc::controllers::{build_problem, ControllerConfig, Method, TerminalCase};
use microgrid_empc::dynamics::AugmentedState;
use microgrid_empc::harness::run_closed_loop;
use microgrid_empc::io::{synth_month, ScenarioConfig};
use microgrid_empc::tariff::CostBreakdown;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn bless() -> bool {
    std::env::var_os("EMPC_BLESS").is_some()
}

fn check_text(name: &str, actual: &str) {
    let path = golden(name);
    if bless() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from the pinned copy");
}

fn fields(c: &CostBreakdown) -> [(&'static str, f64); 5] {
    [
        ("energy_cost", c.energy_cost),
        ("bess_loss_cost", c.bess_loss_cost),
        ("ncdc", c.ncdc),
        ("opdc", c.opdc),
        ("total", c.total),
    ]
}

fn check_cost(name: &str, actual: &CostBreakdown) {
    let path = golden(name);
    if bless() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(actual).unwrap() + "\n").unwrap();
        return;
    }
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let pinned: serde_json::Value = serde_json::from_str(&text).unwrap();
    for (key, v) in fields(actual) {
        let p = pinned[key].as_f64().unwrap_or_else(|| panic!("{name}: missing {key}"));
        assert!((p - v).abs() <= 1e-9 * p.abs().max(1.0), "{name} {key}: pinned {p}, got {v}");
    }
}

#[test]
fn month_std_ref_case_i() {
    let mut cfg = ScenarioConfig::default();
    cfg.select_method(Method::StdRef);
    cfg.reference.case = TerminalCase::I;
    let start = "2024-01-01T00:00:00".parse().unwrap();
    let data = synth_month(cfg.window.days, cfg.horizon.dt_hours, start, cfg.horizon.steps_n);
    let spec = cfg.scenario(&data).unwrap();
    let log = run_closed_loop(&spec).unwrap();
    let cost = log.primary().cost(&spec.window, &spec.site).unwrap();
    check_cost("month_std_ref_i.json", &cost);
}

#[test]
fn two_day_choice2_case_i() {
    let mut cfg = ScenarioConfig::parse("[window]\ndays = 2\n").unwrap();
    cfg.select_method(Method::Choice2);
    cfg.reference.case = TerminalCase::I;
    let start = "2024-01-01T00:00:00".parse().unwrap();
    let data = synth_month(cfg.window.days, cfg.horizon.dt_hours, start, cfg.horizon.steps_n);
    let spec = cfg.scenario(&data).unwrap();
    let log = run_closed_loop(&spec).unwrap();
    check_cost("two_day_choice2_i.json", &log.primary().cost(&spec.window, &spec.site).unwrap());
    check_cost("two_day_std_ref_i.json", &log.reference.cost(&spec.window, &spec.site).unwrap());
}

#[test]
fn horizon_program_dumps() {
    let mut cfg = ScenarioConfig::parse("[horizon]\nsteps_n = 12\n\n[window]\ndays = 1\n").unwrap();
    cfg.select_method(Method::StdRef);
    let start = "2024-01-01T00:00:00".parse().unwrap();
    let data = synth_month(1, 0.25, start, 12);
    let spec = cfg.scenario(&data).unwrap();
    let x0 = AugmentedState::new(0.5, 120.0, 80.0);
    // 15:00, so the horizon crosses into the on-peak hours
    let t0 = 60;
    for (method, case, name) in [
        (Method::StdRef, TerminalCase::II, "std_ref_ii_n12.txt"),
        (Method::TrackRef, TerminalCase::I, "track_ref_i_n12.txt"),
    ] {
        let c = ControllerConfig {
            method,
            case,
            ..spec.reference.clone()
        };
        let p = build_problem(&c, &x0, t0, &spec.site, None).unwrap();
        check_text(name, &p.dump());
    }
}
