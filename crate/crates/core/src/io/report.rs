//! CSV and text outputs. Files keep full precision; only the printed tables
//! round money to cents.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::Serialize;

use crate::controllers::{Method, TerminalCase};
use crate::error::Result;
use crate::guarantees::{GuaranteeReport, DECREASE_TOL, FEASIBILITY_TOL};
use crate::harness::{OracleResult, SimulationLog};
use crate::site::Site;
use crate::tariff::CostBreakdown;

const LOG_HEADER: [&str; 16] = [
    "timestamp",
    "pv",
    "load",
    "ref_u1",
    "ref_u2",
    "ref_soc",
    "ref_x2",
    "ref_x3",
    "u1",
    "u2",
    "soc",
    "x2",
    "x3",
    "V_opt",
    "stage_cost",
    "ref_stage_cost",
];

/// One row per step. States are those at the start of the step. For a run
/// without a proposed controller both column groups show the reference.
pub fn write_simulation_log(
    path: &Path,
    log: &SimulationLog,
    site: &Site,
    timestamp: impl Fn(usize) -> NaiveDateTime,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LOG_HEADER)?;
    let r = &log.reference;
    let s = log.primary();
    for k in 0..log.len() {
        let t = log.start_step + k;
        let rec = [
            timestamp(t).format("%Y-%m-%dT%H:%M:%S").to_string(),
            site.series.pv_kw[t].to_string(),
            site.series.load_kw[t].to_string(),
            r.inputs[k].bess_kw.to_string(),
            r.inputs[k].grid_kw.to_string(),
            r.states[k].soc.to_string(),
            r.states[k].peak.to_string(),
            r.states[k].onpeak_peak.to_string(),
            s.inputs[k].bess_kw.to_string(),
            s.inputs[k].grid_kw.to_string(),
            s.states[k].soc.to_string(),
            s.states[k].peak.to_string(),
            s.states[k].onpeak_peak.to_string(),
            s.objective[k].to_string(),
            s.stage_costs[k].to_string(),
            r.stage_costs[k].to_string(),
        ];
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub scenario: String,
    pub method: Method,
    pub case: TerminalCase,
    /// Reference the method was run against, if any.
    pub reference: Option<Method>,
    #[serde(flatten)]
    pub cost: CostBreakdown,
}

pub fn write_cost_rows(path: &Path, rows: &[CostRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario",
        "method",
        "case",
        "reference",
        "energy_cost",
        "bess_loss_cost",
        "ncdc",
        "opdc",
        "total",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.method.to_string(),
            r.case.as_str().to_string(),
            r.reference.map(|m| m.to_string()).unwrap_or_default(),
            r.cost.energy_cost.to_string(),
            r.cost.bess_loss_cost.to_string(),
            r.cost.ncdc.to_string(),
            r.cost.opdc.to_string(),
            r.cost.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| crate::error::Error::Input(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_oracle(path: &Path, oracle: &OracleResult, start: usize, timestamp: impl Fn(usize) -> NaiveDateTime) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "u1", "u2", "soc", "x2", "x3"])?;
    for (k, u) in oracle.inputs.iter().enumerate() {
        let x = oracle.states[k];
        w.write_record([
            timestamp(start + k).format("%Y-%m-%dT%H:%M:%S").to_string(),
            u.bess_kw.to_string(),
            u.grid_kw.to_string(),
            x.soc.to_string(),
            x.peak.to_string(),
            x.onpeak_peak.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step certificate: decrease residual, running average excess and its
/// bound, and feasibility of the candidate built from that step.
pub fn write_guarantee_report(path: &Path, rep: &GuaranteeReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "step",
        "r",
        "r_tight",
        "required_increment",
        "g",
        "epsilon",
        "candidate_violation",
        "flags",
    ])?;
    let v0 = rep.average_cost.initial_value;
    let c = rep.average_cost.lower_bound;
    let mut excess = 0.0;
    for (i, s) in rep.decrease.steps.iter().enumerate() {
        excess += s.stage_cost - s.reference_stage_cost;
        let n = (i + 1) as f64;
        let mut flags = Vec::new();
        if s.residual > DECREASE_TOL {
            flags.push("decrease");
        }
        if s.candidate_violation > FEASIBILITY_TOL {
            flags.push("infeasible_candidate");
        }
        if s.required_increment > 0.0 {
            flags.push("offset");
        }
        w.write_record([
            s.step.to_string(),
            s.residual.to_string(),
            s.tight_residual.to_string(),
            s.required_increment.to_string(),
            (excess / n).to_string(),
            ((v0 - c) / n).to_string(),
            s.candidate_violation.to_string(),
            flags.join("|"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One summary line per certificate.
pub fn guarantee_summary(rep: &GuaranteeReport) -> String {
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let d = &rep.decrease;
    let c = &rep.average_cost;
    let f = &rep.feasibility;
    format!(
        "{} decrease: max r = {:.3e} (tight {:.3e}, {} offset steps, offset total {:.6}) [{}]\n\
         {} bound: g = {:.6} <= eps = {:.6} (C = {:.4}, V0 = {:.4}) [{}]\n\
         {} shifted feasibility: {} steps, max violation {:.3e} [{}]",
        rep.method,
        d.max_residual,
        d.max_tight_residual,
        d.positive_increments,
        d.offset_total,
        verdict(d.passed()),
        rep.method,
        c.average_excess,
        c.epsilon,
        c.lower_bound,
        c.initial_value,
        verdict(c.passed()),
        rep.method,
        f.checks.len(),
        f.max_violation,
        verdict(f.passed()),
    )
}

fn money(v: f64) -> String {
    let cents = (v * 100.0).round() as i64;
    let (sign, cents) = if cents < 0 { ("-", -cents) } else { ("", cents) };
    let dollars = (cents / 100).to_string();
    let mut grouped = String::new();
    for (i, ch) in dollars.chars().enumerate() {
        if i > 0 && (dollars.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    format!("{sign}${grouped}.{:02}", cents % 100)
}

/// Cost components down the side, cases across the top and methods within
/// each case.
pub fn comparison_table(rows: &[CostRow], with_opdc: bool) -> String {
    let mut cases: Vec<TerminalCase> = rows.iter().map(|r| r.case).collect();
    cases.dedup();
    cases.sort();
    cases.dedup();
    let cols: Vec<&CostRow> = cases.iter().flat_map(|c| rows.iter().filter(move |r| r.case == *c)).collect();
    let width = 14;
    let mut out = String::new();
    let _ = write!(out, "{:<12}", "");
    for c in &cols {
        let _ = write!(out, "{:>width$}", format!("({}) {}", c.case.as_str(), c.method));
    }
    out.push('\n');
    let mut lines: Vec<(&str, fn(&CostBreakdown) -> f64)> = vec![("NCDC", |c| c.ncdc)];
    if with_opdc {
        lines.push(("OPDC", |c| c.opdc));
    }
    lines.push(("Energy", |c| c.energy_cost));
    lines.push(("BESS loss", |c| c.bess_loss_cost));
    lines.push(("Total", |c| c.total));
    for (label, f) in lines {
        let _ = write!(out, "{label:<12}");
        for c in &cols {
            let _ = write!(out, "{:>width$}", money(f(&c.cost)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn money_formatting() {
        assert_eq!(money(3450.0), "$3,450.00");
        assert_eq!(money(1234567.891), "$1,234,567.89");
        assert_eq!(money(-0.5), "-$0.50");
        assert_eq!(money(12.345), "$12.35");
        assert_eq!(money(0.0), "$0.00");
    }

    #[test]
    fn table_layout() {
        let row = |case, method, total| CostRow {
            scenario: "s".into(),
            method,
            case,
            reference: None,
            cost: CostBreakdown {
                total,
                ..Default::default()
            },
        };
        let rows = vec![
            row(TerminalCase::II, Method::StdRef, 2.0),
            row(TerminalCase::I, Method::StdRef, 1.0),
            row(TerminalCase::I, Method::Choice2, 3.0),
        ];
        let t = comparison_table(&rows, false);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].find("(i) std_ref").unwrap() < lines[0].find("(i) choice2").unwrap());
        assert!(lines[0].find("(i) choice2").unwrap() < lines[0].find("(ii) std_ref").unwrap());
        assert!(lines[4].starts_with("Total") && lines[4].ends_with("$2.00"));
        assert_eq!(comparison_table(&rows, true).lines().count(), 6);
    }
}
