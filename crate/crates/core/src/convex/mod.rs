//! Finite-horizon programs for every controller and the solvers behind them.
//!
//! Economic objectives become LPs. Battery dispatch is split as
//! `u1 = p - n` with `p, n in [0, P]`, so `|u1|` is `p + n` and grid import is
//! `u2 = p - n - c`. The terminal running peaks are epigraph columns `m2 >=
//! x2(t)`, `m2 >= u2(k)` (and the same over on-peak steps for `m3`), and each
//! extra `max(., floor)` term gets its own epigraph column whose lower bound is
//! the floor. SOC bounds are ranged rows on the cumulative dispatch. Every
//! epigraph and split column carries a nonnegative cost, which is what makes
//! the reformulation exact; builds that would violate that are rejected.
//!
//! The tracking objective is a diagonal QP in `u1` alone.

pub mod interior;
pub mod lp;
pub mod lu;
pub mod qp;

use std::fmt::{self, Write as _};

use crate::dynamics::{AugmentedState, ControlInput};
use crate::error::{Error, Result};
use crate::site::Site;
use crate::tariff::loss_factor;
use lp::{LpOptions, LpProblem, LpStatus};
use qp::{QpOptions, QpProblem, QpStatus};

/// Relative accuracy asked of every solve.
pub const OBJECTIVE_REL_TOL: f64 = 1e-6;
/// Absolute primal feasibility asked of every solve (kW, kW-steps).
pub const PRIMAL_TOL: f64 = 1e-6;

/// Constraint on the SOC at the end of the horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SocTerminal {
    Free,
    Equal(f64),
    AtLeast(f64),
}

/// How the running peaks enter an economic objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PeakObjective {
    /// `R a(t+N) x(t+N|t)`.
    Terminal,
    /// `R (a(t+N) x(t+N|t) + max(a(t+N) x(t+N|t), floor))`.
    TerminalMax { floor_nc: f64, floor_op: f64 },
    /// `R (a(t+N) x(t+N|t) + max(a(t+1) x(t+1|t), floor))`.
    FirstStepMax { floor_nc: f64, floor_op: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObjectiveSpec {
    Economic(PeakObjective),
    /// `sum_k weights[k] (u2(k) - target[k])^2`.
    Tracking { weights: Vec<f64>, target: Vec<f64> },
}

/// Controller-specific part of a horizon problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub objective: ObjectiveSpec,
    pub soc_terminal: SocTerminal,
    /// Weight of the secondary `sum |u1|` term in economic objectives.
    pub tie_break: f64,
}

/// Column indices of the economic LP.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub charge: Vec<usize>,
    pub discharge: Vec<usize>,
    pub peak: Option<usize>,
    pub onpeak_peak: Option<usize>,
    pub term_nc: Option<usize>,
    pub term_op: Option<usize>,
    pub names: Vec<String>,
    pub row_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Program {
    Lp(LpProblem),
    Qp(QpProblem),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonProblem {
    pub t0: usize,
    pub horizon: usize,
    pub x0: AugmentedState,
    pub skeleton: Skeleton,
    pub program: Program,
    pub layout: Layout,
    /// c(t0 + k)
    pub net: Vec<f64>,
    /// R_EC(t0 + k) * dt
    pub energy_weight: Vec<f64>,
    pub onpeak: Vec<bool>,
    pub loss: f64,
    pub soc_gain: f64,
    pub ncdc_rate: f64,
    pub opdc_rate: f64,
    pub a_start: f64,
    pub b_start: f64,
    pub a_first: f64,
    pub b_first: f64,
    pub a_end: f64,
    pub b_end: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical-failure",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// u(t0 + k | t0), k = 0..N
    pub inputs: Vec<ControlInput>,
    /// x(t0 + k | t0), k = 0..=N
    pub states: Vec<AugmentedState>,
    pub objective: f64,
    pub max_primal_residual: f64,
    pub iterations: usize,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolverOptions {
    pub lp: LpOptions,
    pub qp: QpOptions,
}

fn cumulative_soc_rows(
    x0: &AugmentedState,
    n: usize,
    site: &Site,
    soc_terminal: SocTerminal,
) -> Vec<(usize, f64, f64)> {
    let p = &site.params;
    let scale = p.bess_energy_kwh / site.tariff.dt_hours;
    (1..=n)
        .map(|k| {
            let mut lo = (p.soc_min - x0.soc) * scale;
            let mut hi = (p.soc_max - x0.soc) * scale;
            if k == n {
                match soc_terminal {
                    SocTerminal::Free => {}
                    SocTerminal::Equal(v) => {
                        lo = (v - x0.soc) * scale;
                        hi = lo;
                    }
                    SocTerminal::AtLeast(v) => lo = lo.max((v - x0.soc) * scale),
                }
            }
            (k, lo, hi)
        })
        .collect()
}

/// Builds the horizon program of `skeleton` from state `x0` at step `t0`.
pub fn build_horizon(
    skeleton: &Skeleton,
    x0: &AugmentedState,
    t0: usize,
    horizon: usize,
    site: &Site,
) -> Result<HorizonProblem> {
    if horizon == 0 {
        return Err(Error::Input("horizon must be at least one step".into()));
    }
    site.check_coverage(t0 + horizon)?;
    let params = &site.params;
    let tariff = &site.tariff;
    let dt = tariff.dt_hours;
    let loss = loss_factor(params.eta);
    let net: Vec<f64> = (t0..t0 + horizon).map(|t| site.net(t)).collect();
    let energy_weight: Vec<f64> = (t0..t0 + horizon).map(|t| tariff.energy_rate(t) * dt).collect();
    let onpeak: Vec<bool> = (t0..t0 + horizon).map(|t| tariff.is_onpeak(t)).collect();
    let a_end = site.scaling.a(t0 + horizon);
    let b_end = site.scaling.b(t0 + horizon);
    let a_first = site.scaling.a(t0 + 1);
    let b_first = site.scaling.b(t0 + 1);
    let (ncdc, opdc) = (tariff.ncdc_rate, tariff.opdc_rate);
    let pmax = params.bess_power_kw;
    let soc_rows = cumulative_soc_rows(x0, horizon, site, skeleton.soc_terminal);

    let mut layout = Layout {
        charge: Vec::new(),
        discharge: Vec::new(),
        peak: None,
        onpeak_peak: None,
        term_nc: None,
        term_op: None,
        names: Vec::new(),
        row_names: Vec::new(),
    };

    let program = match &skeleton.objective {
        ObjectiveSpec::Tracking { weights, target } => {
            if weights.len() != horizon || target.len() != horizon {
                return Err(Error::Build("tracking weights and target must have one entry per step".into()));
            }
            if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                return Err(Error::Build("tracking weights must be positive".into()));
            }
            let mut q = QpProblem::default();
            for k in 0..horizon {
                let lo = (-pmax).max(params.grid_lo + net[k]);
                let hi = pmax.min(params.grid_hi + net[k]);
                // (u1 - c - target)^2 expanded
                let shift = net[k] + target[k];
                q.lp.add_col(-2.0 * weights[k] * shift, lo, hi);
                q.quad.push(weights[k]);
                q.lp.offset += weights[k] * shift * shift;
                layout.charge.push(k);
                layout.names.push(format!("u1[{k}]"));
            }
            for (k, lo, hi) in soc_rows {
                q.lp.add_row((0..k).map(|j| (j, 1.0)).collect(), lo, hi);
                layout.row_names.push(format!("soc[{k}]"));
            }
            Program::Qp(q)
        }
        ObjectiveSpec::Economic(peaks) => {
            if loss > 0.0 {
                if let Some(k) = energy_weight.iter().position(|w| *w < 0.0) {
                    return Err(Error::Build(format!(
                        "negative energy rate at step {} makes the loss term nonconvex",
                        t0 + k
                    )));
                }
            }
            if skeleton.tie_break < 0.0 {
                return Err(Error::Build("tie-break weight must be >= 0".into()));
            }
            let nc_cost = ncdc * a_end;
            let op_cost = opdc * b_end;
            if nc_cost < 0.0 || op_cost < 0.0 {
                return Err(Error::Build("negative terminal peak coefficient".into()));
            }
            let mut lp = LpProblem::default();
            for k in 0..horizon {
                let w = energy_weight[k];
                let p = lp.add_col(w * (1.0 + loss) + skeleton.tie_break, 0.0, pmax);
                let n = lp.add_col(w * (loss - 1.0) + skeleton.tie_break, 0.0, pmax);
                lp.offset -= w * net[k];
                layout.charge.push(p);
                layout.discharge.push(n);
                layout.names.push(format!("p[{k}]"));
                layout.names.push(format!("n[{k}]"));
            }
            let use_op = opdc > 0.0;
            let (mut m2_cost, mut m3_cost) = (nc_cost, op_cost);
            if let PeakObjective::TerminalMax { .. } = peaks {
                m2_cost = 0.0;
                m3_cost = 0.0;
            }
            let m2 = lp.add_col(m2_cost, x0.peak, f64::INFINITY);
            layout.peak = Some(m2);
            layout.names.push("peak".into());
            let m3 = if use_op {
                let m3 = lp.add_col(m3_cost, x0.onpeak_peak, f64::INFINITY);
                layout.names.push("onpeak_peak".into());
                Some(m3)
            } else {
                None
            };
            layout.onpeak_peak = m3;

            for (k, lo, hi) in soc_rows {
                let row = (0..k)
                    .flat_map(|j| [(layout.charge[j], 1.0), (layout.discharge[j], -1.0)])
                    .collect();
                lp.add_row(row, lo, hi);
                layout.row_names.push(format!("soc[{k}]"));
            }
            for k in 0..horizon {
                let (p, n) = (layout.charge[k], layout.discharge[k]);
                lp.add_row(vec![(p, 1.0), (n, -1.0), (m2, -1.0)], f64::NEG_INFINITY, net[k]);
                layout.row_names.push(format!("peak[{k}]"));
                if let (Some(m3), true) = (m3, onpeak[k]) {
                    lp.add_row(vec![(p, 1.0), (n, -1.0), (m3, -1.0)], f64::NEG_INFINITY, net[k]);
                    layout.row_names.push(format!("onpeak[{k}]"));
                }
                let glo = params.grid_lo + net[k];
                let ghi = params.grid_hi + net[k];
                if glo > -pmax || ghi < pmax {
                    lp.add_row(vec![(p, 1.0), (n, -1.0)], glo, ghi);
                    layout.row_names.push(format!("grid[{k}]"));
                }
            }

            match *peaks {
                PeakObjective::Terminal => {}
                PeakObjective::TerminalMax { floor_nc, floor_op } => {
                    // m2 carries both the stage term and the max term.
                    let w2 = lp.add_col(ncdc, floor_nc, f64::INFINITY);
                    lp.cost[m2] = nc_cost;
                    lp.add_row(vec![(w2, 1.0), (m2, -a_end)], 0.0, f64::INFINITY);
                    layout.term_nc = Some(w2);
                    layout.names.push("term_nc".into());
                    layout.row_names.push("term_nc".into());
                    if let Some(m3) = m3 {
                        let w3 = lp.add_col(opdc, floor_op, f64::INFINITY);
                        lp.cost[m3] = op_cost;
                        lp.add_row(vec![(w3, 1.0), (m3, -b_end)], 0.0, f64::INFINITY);
                        layout.term_op = Some(w3);
                        layout.names.push("term_op".into());
                        layout.row_names.push("term_op".into());
                    }
                }
                PeakObjective::FirstStepMax { floor_nc, floor_op } => {
                    if a_first < 0.0 || b_first < 0.0 {
                        return Err(Error::Build("negative first-step peak coefficient".into()));
                    }
                    let (p0, n0) = (layout.charge[0], layout.discharge[0]);
                    // max(a1 max(x2, u2(0)), F) = max(a1 u2(0), max(a1 x2, F))
                    let w2 = lp.add_col(ncdc, (a_first * x0.peak).max(floor_nc), f64::INFINITY);
                    lp.add_row(
                        vec![(w2, 1.0), (p0, -a_first), (n0, a_first)],
                        -a_first * net[0],
                        f64::INFINITY,
                    );
                    layout.term_nc = Some(w2);
                    layout.names.push("term_nc".into());
                    layout.row_names.push("term_nc".into());
                    if use_op {
                        let w3 = lp.add_col(opdc, (b_first * x0.onpeak_peak).max(floor_op), f64::INFINITY);
                        if onpeak[0] {
                            lp.add_row(
                                vec![(w3, 1.0), (p0, -b_first), (n0, b_first)],
                                -b_first * net[0],
                                f64::INFINITY,
                            );
                            layout.row_names.push("term_op".into());
                        }
                        layout.term_op = Some(w3);
                        layout.names.push("term_op".into());
                    }
                }
            }
            if let PeakObjective::TerminalMax { floor_nc, floor_op } | PeakObjective::FirstStepMax { floor_nc, floor_op } =
                *peaks
            {
                if !floor_nc.is_finite() || !floor_op.is_finite() {
                    return Err(Error::Build("reference peak floors must be finite".into()));
                }
            }
            Program::Lp(lp)
        }
    };

    Ok(HorizonProblem {
        t0,
        horizon,
        x0: *x0,
        skeleton: skeleton.clone(),
        program,
        layout,
        net,
        energy_weight,
        onpeak,
        loss,
        soc_gain: params.soc_gain(dt),
        ncdc_rate: ncdc,
        opdc_rate: opdc,
        a_start: site.scaling.a(t0),
        b_start: site.scaling.b(t0),
        a_first,
        b_first,
        a_end,
        b_end,
    })
}

impl HorizonProblem {
    pub fn num_vars(&self) -> usize {
        match &self.program {
            Program::Lp(lp) => lp.num_cols(),
            Program::Qp(qp) => qp.lp.num_cols(),
        }
    }

    pub fn num_rows(&self) -> usize {
        match &self.program {
            Program::Lp(lp) => lp.num_rows(),
            Program::Qp(qp) => qp.lp.num_rows(),
        }
    }

    /// Rolls the augmented dynamics forward from `x0` without bound checks.
    pub fn rollout(&self, inputs: &[ControlInput]) -> Vec<AugmentedState> {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        let mut x = self.x0;
        states.push(x);
        for (k, u) in inputs.iter().enumerate() {
            let beta_u2 = if self.onpeak[k] { u.grid_kw } else { 0.0 };
            x = AugmentedState {
                soc: x.soc + u.bess_kw * self.soc_gain,
                peak: x.peak.max(u.grid_kw),
                onpeak_peak: x.onpeak_peak.max(beta_u2),
            };
            states.push(x);
        }
        states
    }

    /// Energy and loss part of the objective.
    pub fn energy_cost(&self, inputs: &[ControlInput]) -> f64 {
        inputs
            .iter()
            .zip(&self.energy_weight)
            .map(|(u, w)| w * (u.grid_kw + self.loss * u.bess_kw.abs()))
            .sum()
    }

    /// The controller objective evaluated with genuine max and abs terms.
    pub fn direct_objective(&self, inputs: &[ControlInput]) -> f64 {
        match &self.skeleton.objective {
            ObjectiveSpec::Tracking { weights, target } => inputs
                .iter()
                .zip(weights.iter().zip(target))
                .map(|(u, (w, r))| w * (u.grid_kw - r) * (u.grid_kw - r))
                .sum(),
            ObjectiveSpec::Economic(peaks) => {
                let states = self.rollout(inputs);
                let end = states[inputs.len()];
                let tie: f64 = self.skeleton.tie_break * inputs.iter().map(|u| u.bess_kw.abs()).sum::<f64>();
                let mut v = self.energy_cost(inputs) + tie;
                v += self.ncdc_rate * self.a_end * end.peak + self.opdc_rate * self.b_end * end.onpeak_peak;
                match *peaks {
                    PeakObjective::Terminal => {}
                    PeakObjective::TerminalMax { floor_nc, floor_op } => {
                        v += self.ncdc_rate * (self.a_end * end.peak).max(floor_nc);
                        v += self.opdc_rate * (self.b_end * end.onpeak_peak).max(floor_op);
                    }
                    PeakObjective::FirstStepMax { floor_nc, floor_op } => {
                        let first = states[1];
                        v += self.ncdc_rate * (self.a_first * first.peak).max(floor_nc);
                        v += self.opdc_rate * (self.b_first * first.onpeak_peak).max(floor_op);
                    }
                }
                v
            }
        }
    }

    fn inputs_from(&self, x: &[f64]) -> Vec<ControlInput> {
        (0..self.horizon)
            .map(|k| {
                let u1 = match &self.program {
                    Program::Lp(_) => x[self.layout.charge[k]] - x[self.layout.discharge[k]],
                    Program::Qp(_) => x[self.layout.charge[k]],
                };
                ControlInput::balanced(u1, self.net[k])
            })
            .collect()
    }

    /// Program variables realizing `inputs`, with every epigraph variable at
    /// the smallest value its rows and bounds allow.
    pub fn point_from_inputs(&self, inputs: &[ControlInput]) -> Vec<f64> {
        match &self.program {
            Program::Qp(_) => inputs.iter().map(|u| u.bess_kw).collect(),
            Program::Lp(lp) => {
                let mut x = vec![0.0; lp.num_cols()];
                for (k, u) in inputs.iter().enumerate().take(self.horizon) {
                    x[self.layout.charge[k]] = u.bess_kw.max(0.0);
                    x[self.layout.discharge[k]] = (-u.bess_kw).max(0.0);
                }
                let end = self.rollout(&inputs[..self.horizon.min(inputs.len())])[self.horizon.min(inputs.len())];
                if let Some(j) = self.layout.peak {
                    x[j] = end.peak;
                }
                if let Some(j) = self.layout.onpeak_peak {
                    x[j] = end.onpeak_peak;
                }
                for j in [self.layout.term_nc, self.layout.term_op].into_iter().flatten() {
                    let mut v = lp.col_lo[j];
                    for (i, row) in lp.rows.iter().enumerate() {
                        let Some(&(_, alpha)) = row.iter().find(|(c, _)| *c == j) else {
                            continue;
                        };
                        if alpha > 0.0 && lp.row_lo[i].is_finite() {
                            let rest: f64 = row.iter().filter(|(c, _)| *c != j).map(|&(c, a)| a * x[c]).sum();
                            v = v.max((lp.row_lo[i] - rest) / alpha);
                        }
                    }
                    x[j] = v;
                }
                x
            }
        }
    }

    /// Largest bound or row violation of the program at `inputs`.
    pub fn constraint_violation(&self, inputs: &[ControlInput]) -> f64 {
        if inputs.len() != self.horizon {
            return f64::INFINITY;
        }
        let x = self.point_from_inputs(inputs);
        let grid = inputs
            .iter()
            .zip(&self.net)
            .map(|(u, c)| (u.grid_kw - (u.bess_kw - c)).abs())
            .fold(0.0, f64::max);
        let lp = match &self.program {
            Program::Lp(lp) => lp,
            Program::Qp(qp) => &qp.lp,
        };
        lp.max_violation(&x).max(grid)
    }

    /// Text listing of variables, bounds, rows and objective.
    pub fn dump(&self) -> String {
        let lp = match &self.program {
            Program::Lp(lp) => lp,
            Program::Qp(qp) => &qp.lp,
        };
        let mut s = String::new();
        let _ = writeln!(s, "# horizon t0={} N={} x0=({}, {}, {})", self.t0, self.horizon, self.x0.soc, self.x0.peak, self.x0.onpeak_peak);
        let _ = writeln!(s, "objective offset {}", lp.offset);
        let _ = writeln!(s, "variables {}", lp.num_cols());
        for j in 0..lp.num_cols() {
            let quad = match &self.program {
                Program::Qp(qp) => format!(" quad {}", qp.quad[j]),
                Program::Lp(_) => String::new(),
            };
            let _ = writeln!(
                s,
                "  {} in [{}, {}] cost {}{}",
                self.layout.names[j], lp.col_lo[j], lp.col_hi[j], lp.cost[j], quad
            );
        }
        let _ = writeln!(s, "rows {}", lp.num_rows());
        for (i, row) in lp.rows.iter().enumerate() {
            let terms: Vec<String> = row
                .iter()
                .map(|&(j, a)| format!("{a}*{}", self.layout.names[j]))
                .collect();
            let _ = writeln!(
                s,
                "  {}: {} <= {} <= {}",
                self.layout.row_names[i],
                lp.row_lo[i],
                terms.join(" + "),
                lp.row_hi[i]
            );
        }
        s
    }
}

/// Solves a horizon program and maps the result back to inputs and states.
pub fn solve(p: &HorizonProblem, opts: &SolverOptions) -> SolveResult {
    let (status, x, objective, residual, iterations, detail) = match &p.program {
        Program::Lp(lp) => {
            let s = lp::solve_lp(lp, &opts.lp);
            let st = match s.status {
                LpStatus::Optimal => SolveStatus::Optimal,
                LpStatus::Infeasible => SolveStatus::Infeasible,
                LpStatus::Unbounded => SolveStatus::Unbounded,
                LpStatus::NumericalFailure => SolveStatus::NumericalFailure,
            };
            (st, s.x, s.objective, s.max_primal_residual, s.iterations, s.detail)
        }
        Program::Qp(qp) => {
            let s = qp::solve_qp(qp, &opts.qp);
            let st = match s.status {
                QpStatus::Optimal => SolveStatus::Optimal,
                QpStatus::Infeasible => SolveStatus::Infeasible,
                QpStatus::NumericalFailure => SolveStatus::NumericalFailure,
            };
            (st, s.x, s.objective, s.max_primal_residual, s.iterations, s.detail)
        }
    };
    if status != SolveStatus::Optimal {
        return SolveResult {
            status,
            inputs: Vec::new(),
            states: Vec::new(),
            objective: f64::NAN,
            max_primal_residual: residual,
            iterations,
            detail,
        };
    }
    let inputs = p.inputs_from(&x);
    let states = p.rollout(&inputs);
    let mut result = SolveResult {
        status,
        inputs,
        states,
        objective,
        max_primal_residual: residual,
        iterations,
        detail,
    };
    if residual > PRIMAL_TOL {
        result.status = SolveStatus::NumericalFailure;
        result.detail = format!("primal residual {residual:e} exceeds {PRIMAL_TOL:e}");
    }
    result
}

/// |direct objective - reported objective| at the returned inputs.
pub fn verify_epigraph_tightness(p: &HorizonProblem, r: &SolveResult) -> f64 {
    (p.direct_objective(&r.inputs) - r.objective).abs()
}

/// `|a - b| / max(1, |a|, |b|)`.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}
