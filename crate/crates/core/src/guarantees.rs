//! Closed-loop performance certificates for the proposed controllers:
//! per-step decrease of the value function, the average-cost bound against
//! the reference and feasibility of the shifted candidate.
//!
//! `V` below is the full horizon objective, stage costs plus terminal cost,
//! without the time-varying offset `h`. The offset is built online from the
//! terminal-cost condition: each step adds the smallest nonnegative increment
//! that makes the condition hold at the terminal step of that solve.

use serde::Serialize;

use crate::controllers::{
    build_problem, full_objective, required_h_increment, AssumptionMode, ReferenceInfo, TrajectoryView,
};
use crate::dynamics::{
    advance_augmented, feasible_input_set, step_unchecked, terminal_control_law, AugmentedState, ControlInput,
    TerminalLaw,
};
use crate::error::{Error, Result};
use crate::harness::SimulationLog;
use crate::site::Site;
use crate::tariff::BillingWindow;

/// Allowed per-step decrease residual, in dollars.
pub const DECREASE_TOL: f64 = 1e-5;
/// Allowed average-cost bound excess, in dollars per step.
pub const BOUND_TOL: f64 = 1e-5;
/// Allowed constraint violation of the shifted candidate.
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// Steps sampled for the shifted-candidate feasibility check.
pub const FEASIBILITY_SAMPLES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepCheck {
    pub step: usize,
    pub value: f64,
    pub value_next: f64,
    pub value_candidate: f64,
    pub stage_cost: f64,
    pub reference_stage_cost: f64,
    /// Smallest offset increment the terminal condition asks for.
    pub required_increment: f64,
    pub offset_increment: f64,
    pub residual: f64,
    /// `value_next - value_candidate`, the residual with no offset slack.
    pub tight_residual: f64,
    /// Disagreement of the two ways of computing the required increment.
    pub identity_gap: f64,
    pub candidate_violation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DecreaseReport {
    pub steps: Vec<StepCheck>,
    pub max_residual: f64,
    pub max_tight_residual: f64,
    pub max_identity_gap: f64,
    /// Steps where the terminal condition needed a positive increment.
    pub positive_increments: usize,
    pub offset_total: f64,
}

impl DecreaseReport {
    pub fn passed(&self) -> bool {
        !self.steps.is_empty() && self.max_residual <= DECREASE_TOL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AverageCostReport {
    pub steps: usize,
    /// Average of `l - l_ref` over the window.
    pub average_excess: f64,
    pub initial_value: f64,
    pub lower_bound: f64,
    /// `(initial_value - lower_bound) / steps`
    pub epsilon: f64,
    /// The same bound with the accumulated offset added back in.
    pub epsilon_with_offset: f64,
}

impl AverageCostReport {
    pub fn passed(&self) -> bool {
        self.average_excess <= self.epsilon + BOUND_TOL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FeasibilityCheck {
    pub step: usize,
    /// Largest row or bound violation in the next program.
    pub violation: f64,
    /// Whether the candidate also survives the checked dynamics.
    pub dynamics_ok: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub checks: Vec<FeasibilityCheck>,
    pub max_violation: f64,
}

impl FeasibilityReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.max_violation <= FEASIBILITY_TOL && self.checks.iter().all(|c| c.dynamics_ok)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GuaranteeReport {
    pub method: String,
    pub decrease: DecreaseReport,
    pub average_cost: AverageCostReport,
    pub feasibility: FeasibilityReport,
}

impl GuaranteeReport {
    pub fn passed(&self) -> bool {
        self.decrease.passed() && self.average_cost.passed() && self.feasibility.passed()
    }
}

/// Open-loop trajectory of the solve at window index `k`, extended by the
/// terminal law: `N + 2` states and `N + 1` inputs starting at step `t`.
struct Extended {
    t: usize,
    states: Vec<AugmentedState>,
    inputs: Vec<ControlInput>,
}

fn extended_plan(log: &SimulationLog, k: usize, site: &Site) -> Result<Extended> {
    let cfg = log
        .proposed_config
        .as_ref()
        .ok_or_else(|| Error::Log("log has no proposed controller".into()))?;
    let sys = log.proposed.as_ref().expect("config and log come together");
    let t = log.start_step + k;
    let n = cfg.horizon_steps;
    let plan = sys.plans.get(k).ok_or_else(|| Error::Log(format!("no plan stored for step {t}")))?;
    if plan.len() != n {
        return Err(Error::Log(format!("plan at step {t} has {} inputs, expected {n}", plan.len())));
    }
    let mut states = Vec::with_capacity(n + 2);
    states.push(sys.states[k]);
    for (j, u) in plan.iter().enumerate() {
        let x = step_unchecked(&states[j], u, t + j, &site.params, &site.tariff);
        states.push(x);
    }
    let law = cfg
        .terminal_law(log.reference.inputs[k].bess_kw)
        .expect("proposed controllers have a terminal law");
    let tau = t + n;
    let mut inputs = plan.clone();
    let law = match law {
        TerminalLaw::Relaxed { .. } => {
            let mode = cfg.method.assumption().expect("proposed controllers state an assumption");
            TerminalLaw::Relaxed {
                u1: cheapest_terminal_u1(log, k, site, mode, &mut states, &mut inputs)?,
            }
        }
        other => other,
    };
    let u_term = terminal_control_law(tau, law, &site.params, &site.series)?;
    states.push(step_unchecked(&states[n], &u_term, tau, &site.params, &site.tariff));
    inputs.push(u_term);
    Ok(Extended { t, states, inputs })
}

/// Admissible terminal dispatch with the smallest required offset increment.
/// The increment is convex and piecewise linear in `u1`, so the minimum sits
/// on a kink or an end of the admissible interval. Ties keep `u1 = 0`.
fn cheapest_terminal_u1(
    log: &SimulationLog,
    k: usize,
    site: &Site,
    mode: AssumptionMode,
    states: &mut Vec<AugmentedState>,
    inputs: &mut Vec<ControlInput>,
) -> Result<f64> {
    let n = inputs.len();
    let t = log.start_step + k;
    let tau = t + n;
    let x = states[n];
    let (lo, hi) = feasible_input_set(&x, tau, &site.params, &site.tariff, &site.series)?;
    let c = site.net(tau);
    let reference_states = &log.reference.states[k..=k + 2];
    let mut grid_kinks = vec![x.peak, x.onpeak_peak];
    let (a, b) = (site.scaling.a(tau + 1), site.scaling.b(tau + 1));
    if a > 0.0 {
        grid_kinks.push(site.scaling.a(t + 2) * reference_states[2].peak / a);
    }
    if b > 0.0 {
        grid_kinks.push(site.scaling.b(t + 2) * reference_states[2].onpeak_peak / b);
    }
    let mut trial = vec![0.0, lo, hi];
    trial.extend(grid_kinks.iter().map(|g| g + c));

    let mut best = (f64::INFINITY, 0.0);
    for u1 in trial.into_iter().map(|u| u.clamp(lo, hi)) {
        let u = ControlInput::balanced(u1, c);
        states.push(step_unchecked(&x, &u, tau, &site.params, &site.tariff));
        inputs.push(u);
        let system = TrajectoryView {
            start: t,
            states,
            inputs,
        };
        let reference = TrajectoryView {
            start: t,
            states: reference_states,
            inputs: &log.reference.inputs[k..=k],
        };
        let required = required_h_increment(tau, &system, &reference, mode, site, n);
        states.pop();
        inputs.pop();
        let required = required?;
        if required < best.0 - 1e-9 * required.abs().max(1.0) {
            best = (required, u1);
        }
    }
    Ok(best.1)
}

fn reference_info(log: &SimulationLog, k: usize) -> ReferenceInfo {
    ReferenceInfo {
        x_ref_now: log.reference.states[k],
        u_ref_prev: log.reference.inputs[k],
        x_ref_next: log.reference.states[k + 1],
    }
}

/// Program of the solve at window index `k`, rebuilt from the log.
fn program_at(log: &SimulationLog, k: usize, site: &Site) -> Result<crate::convex::HorizonProblem> {
    let cfg = log.proposed_config.as_ref().expect("checked by caller");
    let sys = log.proposed.as_ref().expect("checked by caller");
    build_problem(cfg, &sys.states[k], log.start_step + k, site, Some(&reference_info(log, k)))
}

fn check_log_shape(log: &SimulationLog) -> Result<()> {
    let (Some(sys), Some(_)) = (&log.proposed, &log.proposed_config) else {
        return Err(Error::Log("log has no proposed controller".into()));
    };
    let len = log.reference.len();
    if sys.len() != len || sys.states.len() != len + 1 || log.reference.states.len() != len + 1 {
        return Err(Error::Log("reference and proposed logs have different lengths".into()));
    }
    if sys.full_objective.len() != len || sys.stage_costs.len() != len || log.reference.stage_costs.len() != len {
        return Err(Error::Log("per-step columns are incomplete".into()));
    }
    Ok(())
}

/// Candidate for the solve at `k + 1`: the tail of solve `k` plus its
/// terminal input.
fn candidate(ext: &Extended) -> &[ControlInput] {
    &ext.inputs[1..]
}

/// Walks every step of the run for which the successor solve and the
/// reference two steps ahead exist.
pub fn check_stepwise_decrease(log: &SimulationLog, site: &Site) -> Result<DecreaseReport> {
    check_log_shape(log)?;
    let cfg = log.proposed_config.as_ref().expect("checked");
    let sys = log.proposed.as_ref().expect("checked");
    let mode = cfg.method.assumption().expect("proposed controllers state an assumption");
    let n = cfg.horizon_steps;
    let len = log.len();
    let mut report = DecreaseReport::default();
    if len < 2 {
        return Ok(report);
    }
    report.max_residual = f64::NEG_INFINITY;
    report.max_tight_residual = f64::NEG_INFINITY;
    let mut current = program_at(log, 0, site)?;
    for k in 0..len - 1 {
        let ext = extended_plan(log, k, site)?;
        let value = full_objective(&current, &ext.inputs[..n]).expect("proposed objectives are economic");
        let logged = sys.value(k)?;
        if (value - logged).abs() > 1e-9 * value.abs().max(1.0) {
            return Err(Error::Log(format!(
                "logged objective at step {} ({logged}) does not match its plan ({value})",
                ext.t
            )));
        }
        let next = program_at(log, k + 1, site)?;
        if next.x0 != ext.states[1] {
            return Err(Error::Log(format!("logged state at step {} does not follow its plan", ext.t + 1)));
        }
        let cand = candidate(&ext);
        let value_candidate = full_objective(&next, cand).expect("economic");
        let value_next = sys.value(k + 1)?;

        let system = TrajectoryView {
            start: ext.t,
            states: &ext.states,
            inputs: &ext.inputs,
        };
        let reference = TrajectoryView {
            start: ext.t,
            states: &log.reference.states[k..=k + 2],
            inputs: &log.reference.inputs[k..=k],
        };
        let required = required_h_increment(ext.t + n, &system, &reference, mode, site, n)?;
        let stage_cost = sys.stage_costs[k];
        let reference_stage_cost = log.reference.stage_costs[k];
        let identity_gap = (required - (value_candidate - value + stage_cost - reference_stage_cost)).abs();
        let offset_increment = required.max(0.0);
        let tight_residual = value_next - value_candidate;
        let residual = tight_residual + required - offset_increment;
        let candidate_violation = next.constraint_violation(cand);

        report.max_residual = report.max_residual.max(residual);
        report.max_tight_residual = report.max_tight_residual.max(tight_residual);
        report.max_identity_gap = report.max_identity_gap.max(identity_gap);
        report.offset_total += offset_increment;
        if required > 0.0 {
            report.positive_increments += 1;
        }
        report.steps.push(StepCheck {
            step: ext.t,
            value,
            value_next,
            value_candidate,
            stage_cost,
            reference_stage_cost,
            required_increment: required,
            offset_increment,
            residual,
            tight_residual,
            identity_gap,
            candidate_violation,
        });
        current = next;
    }
    Ok(report)
}

/// A lower bound on the full horizon objective of any solve in the window,
/// valid for every proposed controller. Per-step energy terms are minimized
/// over the power and grid box, peak increments are bounded below by zero
/// when the scaling does not drop across the horizon, and the terminal max
/// terms are nonnegative by construction.
pub fn value_lower_bound(site: &Site, window: &BillingWindow, n: usize) -> Result<f64> {
    site.check_coverage(window.end_step() - 1 + n)?;
    let p = &site.params;
    let tariff = &site.tariff;
    let loss = crate::tariff::loss_factor(p.eta);
    let energy_min: Vec<f64> = (window.start_step..window.end_step() - 1 + n)
        .map(|t| {
            let c = site.net(t);
            let w = tariff.energy_rate(t) * tariff.dt_hours;
            let lo = (-p.bess_power_kw).max(p.grid_lo + c);
            let hi = p.bess_power_kw.min(p.grid_hi + c);
            let f = |u: f64| w * (u - c + loss * u.abs());
            f(lo).min(f(hi)).min(f(0.0f64.clamp(lo, hi)))
        })
        .collect();
    // largest possible import bounds every running peak
    let peak_hi = (window.start_step..window.end_step() - 1 + n)
        .map(|t| (p.bess_power_kw - site.net(t)).min(p.grid_hi).max(0.0))
        .fold(0.0, f64::max);
    let mut best = f64::INFINITY;
    let mut sum: f64 = energy_min[..n].iter().sum();
    for (k, t) in window.steps().enumerate() {
        if k > 0 {
            sum += energy_min[k + n - 1] - energy_min[k - 1];
        }
        let da = site.scaling.a(t + n) - site.scaling.a(t);
        let db = site.scaling.b(t + n) - site.scaling.b(t);
        let lb = sum + tariff.ncdc_rate * (da * peak_hi).min(0.0) + tariff.opdc_rate * (db * peak_hi).min(0.0);
        best = best.min(lb);
    }
    Ok(best)
}

/// Average excess cost over the reference against its bound.
pub fn check_average_cost_bound(log: &SimulationLog, site: &Site, offset_total: f64) -> Result<AverageCostReport> {
    check_log_shape(log)?;
    let cfg = log.proposed_config.as_ref().expect("checked");
    let sys = log.proposed.as_ref().expect("checked");
    let len = log.len();
    if len == 0 {
        return Err(Error::Log("empty run".into()));
    }
    let window = BillingWindow::new(log.start_step, len, &site.tariff)?;
    let lower_bound = value_lower_bound(site, &window, cfg.horizon_steps)?;
    let excess: f64 = sys
        .stage_costs
        .iter()
        .zip(&log.reference.stage_costs)
        .map(|(l, lr)| l - lr)
        .sum();
    let initial_value = sys.value(0)?;
    let steps = len as f64;
    Ok(AverageCostReport {
        steps: len,
        average_excess: excess / steps,
        initial_value,
        lower_bound,
        epsilon: (initial_value - lower_bound) / steps,
        epsilon_with_offset: (initial_value - lower_bound + offset_total) / steps,
    })
}

/// Evenly spaced window indices, at most `count` of them, excluding the last
/// step (which has no successor solve).
pub fn sample_steps(len: usize, count: usize) -> Vec<usize> {
    if len < 2 || count == 0 {
        return Vec::new();
    }
    let avail = len - 1;
    if avail <= count {
        return (0..avail).collect();
    }
    (0..count).map(|i| i * avail / count).collect()
}

/// Checks that the shifted tail plus terminal input of each sampled solve is
/// admissible for the next solve.
pub fn check_shifted_feasibility(log: &SimulationLog, site: &Site, samples: &[usize]) -> Result<FeasibilityReport> {
    check_log_shape(log)?;
    let mut report = FeasibilityReport::default();
    for &k in samples {
        if k + 1 >= log.len() {
            return Err(Error::Log(format!("sample index {k} has no successor solve")));
        }
        let ext = extended_plan(log, k, site)?;
        let next = program_at(log, k + 1, site)?;
        let cand = candidate(&ext);
        let violation = next.constraint_violation(cand);
        let dynamics_ok = admissible_by_dynamics(&next, cand, site);
        report.max_violation = report.max_violation.max(violation);
        report.checks.push(FeasibilityCheck {
            step: ext.t,
            violation,
            dynamics_ok,
        });
    }
    Ok(report)
}

/// Independent of the program rows: replays the candidate through the
/// checked dynamics and tests the terminal SOC constraint directly.
fn admissible_by_dynamics(p: &crate::convex::HorizonProblem, inputs: &[ControlInput], site: &Site) -> bool {
    let mut x = p.x0;
    for (j, u) in inputs.iter().enumerate() {
        match advance_augmented(&x, u, p.t0 + j, &site.params, &site.tariff, &site.series) {
            Ok(next) => x = next,
            Err(_) => return false,
        }
    }
    match p.skeleton.soc_terminal {
        crate::convex::SocTerminal::Free => true,
        crate::convex::SocTerminal::Equal(v) => (x.soc - v).abs() <= crate::dynamics::SOC_TOL,
        crate::convex::SocTerminal::AtLeast(v) => x.soc >= v - crate::dynamics::SOC_TOL,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub mode: AssumptionMode,
    /// Whether `mode` differs from the one the logged controller relies on.
    pub mismatched: bool,
    pub increments: Vec<f64>,
    /// Total offset growth, the sum of positive increments.
    pub positive_sum: f64,
    pub max_increment: f64,
}

impl AssumptionReport {
    /// An offset built from these increments stays bounded on the window.
    pub fn passed(&self) -> bool {
        !self.increments.is_empty() && self.increments.iter().all(|v| v.is_finite()) && self.positive_sum.is_finite()
    }
}

/// Required offset increments of every solve under `mode`, which may differ
/// from the logged controller's own assumption.
pub fn certify_assumptions(log: &SimulationLog, site: &Site, mode: AssumptionMode) -> Result<AssumptionReport> {
    check_log_shape(log)?;
    let cfg = log.proposed_config.as_ref().expect("checked");
    let own = cfg.method.assumption();
    let mismatched = own != Some(mode);
    if mismatched {
        log::warn!("checking {mode:?} on a {} run, which relies on {own:?}", cfg.method);
    }
    let n = cfg.horizon_steps;
    let mut increments = Vec::with_capacity(log.len());
    for k in 0..log.len().saturating_sub(1) {
        let ext = extended_plan(log, k, site)?;
        let system = TrajectoryView {
            start: ext.t,
            states: &ext.states,
            inputs: &ext.inputs,
        };
        let reference = TrajectoryView {
            start: ext.t,
            states: &log.reference.states[k..=k + 2],
            inputs: &log.reference.inputs[k..=k],
        };
        increments.push(required_h_increment(ext.t + n, &system, &reference, mode, site, n)?);
    }
    Ok(AssumptionReport {
        mode,
        mismatched,
        positive_sum: increments.iter().map(|v| v.max(0.0)).sum(),
        max_increment: increments.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        increments,
    })
}

/// All three certificates for a proposed-controller run.
pub fn certify(log: &SimulationLog, site: &Site) -> Result<GuaranteeReport> {
    let decrease = check_stepwise_decrease(log, site)?;
    let average_cost = check_average_cost_bound(log, site, decrease.offset_total)?;
    let samples = sample_steps(log.len(), FEASIBILITY_SAMPLES);
    let feasibility = check_shifted_feasibility(log, site, &samples)?;
    Ok(GuaranteeReport {
        method: log.primary_config().method.to_string(),
        decrease,
        average_cost,
        feasibility,
    })
}
