//! The two reference controllers and the three proposed economic MPC
//! controllers, expressed as horizon problems.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::convex::{build_horizon, HorizonProblem, ObjectiveSpec, PeakObjective, Skeleton, SocTerminal};
use crate::dynamics::{advance_augmented, AugmentedState, ControlInput, TerminalLaw};
use crate::error::{Error, Result};
use crate::site::Site;
use crate::tariff::loss_factor;

/// Terminal SOC floor used by terminal case (iii).
pub const CASE_III_SOC_FLOOR: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    StdRef,
    TrackRef,
    Choice1,
    Choice2,
    Choice3,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::StdRef,
        Method::TrackRef,
        Method::Choice1,
        Method::Choice2,
        Method::Choice3,
    ];

    pub fn is_reference(self) -> bool {
        matches!(self, Method::StdRef | Method::TrackRef)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::StdRef => "std_ref",
            Method::TrackRef => "track_ref",
            Method::Choice1 => "choice1",
            Method::Choice2 => "choice2",
            Method::Choice3 => "choice3",
        }
    }

    /// The assumption whose inequality certifies this method's terminal cost.
    pub fn assumption(self) -> Option<AssumptionMode> {
        match self {
            Method::Choice1 => Some(AssumptionMode::Assum6),
            Method::Choice2 => Some(AssumptionMode::Assum7),
            Method::Choice3 => Some(AssumptionMode::AssumB1),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Terminal SOC handling of the reference methods.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TerminalCase {
    /// No terminal constraint.
    #[default]
    #[serde(rename = "i")]
    I,
    /// Terminal SOC equal to the current SOC.
    #[serde(rename = "ii")]
    II,
    /// Terminal SOC at least 0.5.
    #[serde(rename = "iii")]
    III,
}

impl TerminalCase {
    pub const ALL: [TerminalCase; 3] = [TerminalCase::I, TerminalCase::II, TerminalCase::III];

    pub fn as_str(self) -> &'static str {
        match self {
            TerminalCase::I => "i",
            TerminalCase::II => "ii",
            TerminalCase::III => "iii",
        }
    }

    fn soc_terminal(self, x0: &AugmentedState) -> SocTerminal {
        match self {
            TerminalCase::I => SocTerminal::Free,
            TerminalCase::II => SocTerminal::Equal(x0.soc),
            TerminalCase::III => SocTerminal::AtLeast(CASE_III_SOC_FLOOR),
        }
    }
}

impl fmt::Display for TerminalCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TerminalCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TerminalCase::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown terminal case `{s}` (expected i, ii or iii)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub method: Method,
    #[serde(default = "default_horizon")]
    pub horizon_steps: usize,
    /// Only read by the reference methods.
    #[serde(default)]
    pub case: TerminalCase,
    /// Floor the on-peak tracking target at the running on-peak peak.
    #[serde(default)]
    pub track_opdp_floor: bool,
    /// Weight of a secondary `sum |u1|` term that breaks ties between
    /// equal-cost dispatches. Zero keeps the objective exact.
    #[serde(default)]
    pub tie_break: f64,
}

fn default_horizon() -> usize {
    96
}

impl ControllerConfig {
    pub fn new(method: Method, case: TerminalCase) -> Self {
        Self {
            method,
            horizon_steps: default_horizon(),
            case,
            track_opdp_floor: false,
            tie_break: 0.0,
        }
    }

    /// Checks the horizon against the time needed to sweep the SOC range.
    /// A battery with zero power cannot move its SOC and is exempt.
    pub fn validate(&self, site: &Site) -> Result<()> {
        if self.horizon_steps == 0 {
            return Err(Error::Config("horizon_steps must be at least 1".into()));
        }
        if !(self.tie_break >= 0.0 && self.tie_break.is_finite()) {
            return Err(Error::Config("tie_break must be finite and >= 0".into()));
        }
        if site.params.bess_power_kw > 0.0 {
            let need = site.params.traversal_steps(site.tariff.dt_hours);
            if need > self.horizon_steps as f64 + 1e-9 {
                return Err(Error::Config(format!(
                    "horizon of {} steps is shorter than the {need:.2} steps needed to sweep the SOC range",
                    self.horizon_steps
                )));
            }
        }
        if self.method == Method::TrackRef && site.tariff.ncdc_rate <= 0.0 {
            return Err(Error::Config("tracking weights need a positive non-coincident demand rate".into()));
        }
        Ok(())
    }

    /// Terminal control law that completes the shifted candidate.
    pub fn terminal_law(&self, reference_u1: f64) -> Option<TerminalLaw> {
        match self.method {
            Method::Choice1 => Some(TerminalLaw::Choice1 { ref_u1: reference_u1 }),
            Method::Choice2 | Method::Choice3 => Some(TerminalLaw::relaxed_default()),
            _ => None,
        }
    }
}

/// What a proposed controller may know about the reference at step `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceInfo {
    /// x^r(t)
    pub x_ref_now: AugmentedState,
    /// u^r(t)
    pub u_ref_prev: ControlInput,
    /// x^r(t + 1)
    pub x_ref_next: AugmentedState,
}

impl ReferenceInfo {
    /// Advances the reference by its applied input.
    pub fn from_step(x_ref_now: AugmentedState, u_ref: ControlInput, t: usize, site: &Site) -> Result<Self> {
        let x_ref_next = advance_augmented(&x_ref_now, &u_ref, t, &site.params, &site.tariff, &site.series)?;
        Ok(Self {
            x_ref_now,
            u_ref_prev: u_ref,
            x_ref_next,
        })
    }

    pub fn validate(&self, t: usize, site: &Site) -> Result<()> {
        let next = advance_augmented(&self.x_ref_now, &self.u_ref_prev, t, &site.params, &site.tariff, &site.series)?;
        if next != self.x_ref_next {
            return Err(Error::Validation(format!(
                "reference state at step {} does not follow from the reference input",
                t + 1
            )));
        }
        Ok(())
    }

    fn floors(&self, t: usize, site: &Site) -> Result<(f64, f64)> {
        let nc = site.scaling.a(t + 1) * self.x_ref_next.peak;
        let op = site.scaling.b(t + 1) * self.x_ref_next.onpeak_peak;
        if !nc.is_finite() || !op.is_finite() {
            return Err(Error::Build("reference peaks must be finite".into()));
        }
        Ok((nc, op))
    }
}

/// Diagonal of the tracking weight matrix, squared.
pub fn tracking_weights(t0: usize, n: usize, site: &Site) -> Result<Vec<f64>> {
    let tariff = &site.tariff;
    if tariff.ncdc_rate <= 0.0 {
        return Err(Error::Config("tracking weights need a positive non-coincident demand rate".into()));
    }
    let on = (tariff.ncdc_rate + tariff.opdc_rate) / tariff.ncdc_rate;
    Ok((t0..t0 + n)
        .map(|t| if tariff.is_onpeak(t) { on * on } else { 1.0 })
        .collect())
}

/// Grid import that spreads the horizon's whole net load over its off-peak
/// steps, floored at the running peak; zero on-peak.
pub fn ideal_import_profile(
    t0: usize,
    n: usize,
    site: &Site,
    x_ref_now: &AugmentedState,
    opdp_floor: bool,
) -> Result<Vec<f64>> {
    site.check_coverage(t0 + n)?;
    let onpeak: Vec<bool> = (t0..t0 + n).map(|t| site.tariff.is_onpeak(t)).collect();
    let n_off = onpeak.iter().filter(|&&on| !on).count();
    if n_off == 0 {
        return Err(Error::Config(format!(
            "horizon starting at step {t0} has no off-peak steps to spread the load over"
        )));
    }
    let total: f64 = (t0..t0 + n).map(|t| site.net(t)).sum();
    let spread = (-total / n_off as f64).max(x_ref_now.peak);
    let on_value = if opdp_floor { x_ref_now.onpeak_peak.max(0.0) } else { 0.0 };
    Ok(onpeak.iter().map(|&on| if on { on_value } else { spread }).collect())
}

fn economic(peaks: PeakObjective, soc: SocTerminal, cfg: &ControllerConfig) -> Skeleton {
    Skeleton {
        objective: ObjectiveSpec::Economic(peaks),
        soc_terminal: soc,
        tie_break: cfg.tie_break,
    }
}

fn need_reference<'a>(cfg: &ControllerConfig, reference: Option<&'a ReferenceInfo>) -> Result<&'a ReferenceInfo> {
    reference.ok_or_else(|| Error::Input(format!("{} needs the reference state of the current step", cfg.method)))
}

pub fn std_ref_problem(cfg: &ControllerConfig, x0: &AugmentedState, t0: usize, site: &Site) -> Result<HorizonProblem> {
    let sk = economic(PeakObjective::Terminal, cfg.case.soc_terminal(x0), cfg);
    build_horizon(&sk, x0, t0, cfg.horizon_steps, site)
}

pub fn track_ref_problem(cfg: &ControllerConfig, x0: &AugmentedState, t0: usize, site: &Site) -> Result<HorizonProblem> {
    let n = cfg.horizon_steps;
    let sk = Skeleton {
        objective: ObjectiveSpec::Tracking {
            weights: tracking_weights(t0, n, site)?,
            target: ideal_import_profile(t0, n, site, x0, cfg.track_opdp_floor)?,
        },
        soc_terminal: cfg.case.soc_terminal(x0),
        tie_break: 0.0,
    };
    build_horizon(&sk, x0, t0, n, site)
}

pub fn choice1_problem(
    cfg: &ControllerConfig,
    x0: &AugmentedState,
    t0: usize,
    site: &Site,
    reference: &ReferenceInfo,
) -> Result<HorizonProblem> {
    let (floor_nc, floor_op) = reference.floors(t0, site)?;
    let sk = economic(
        PeakObjective::TerminalMax { floor_nc, floor_op },
        SocTerminal::Equal(reference.x_ref_now.soc),
        cfg,
    );
    build_horizon(&sk, x0, t0, cfg.horizon_steps, site)
}

pub fn choice2_problem(
    cfg: &ControllerConfig,
    x0: &AugmentedState,
    t0: usize,
    site: &Site,
    reference: &ReferenceInfo,
) -> Result<HorizonProblem> {
    let (floor_nc, floor_op) = reference.floors(t0, site)?;
    let sk = economic(PeakObjective::TerminalMax { floor_nc, floor_op }, SocTerminal::Free, cfg);
    build_horizon(&sk, x0, t0, cfg.horizon_steps, site)
}

pub fn choice3_problem(
    cfg: &ControllerConfig,
    x0: &AugmentedState,
    t0: usize,
    site: &Site,
    reference: &ReferenceInfo,
) -> Result<HorizonProblem> {
    let (floor_nc, floor_op) = reference.floors(t0, site)?;
    let sk = economic(PeakObjective::FirstStepMax { floor_nc, floor_op }, SocTerminal::Free, cfg);
    build_horizon(&sk, x0, t0, cfg.horizon_steps, site)
}

/// Builds the horizon problem of any method.
pub fn build_problem(
    cfg: &ControllerConfig,
    x0: &AugmentedState,
    t0: usize,
    site: &Site,
    reference: Option<&ReferenceInfo>,
) -> Result<HorizonProblem> {
    match cfg.method {
        Method::StdRef => std_ref_problem(cfg, x0, t0, site),
        Method::TrackRef => track_ref_problem(cfg, x0, t0, site),
        Method::Choice1 => choice1_problem(cfg, x0, t0, site, need_reference(cfg, reference)?),
        Method::Choice2 => choice2_problem(cfg, x0, t0, site, need_reference(cfg, reference)?),
        Method::Choice3 => choice3_problem(cfg, x0, t0, site, need_reference(cfg, reference)?),
    }
}

/// Sum of stage costs over the horizon plus the terminal cost without `h`.
/// This differs from the implemented objective only by constants known at
/// solve time. `None` for the tracking objective, which is not economic.
pub fn full_objective(p: &HorizonProblem, inputs: &[ControlInput]) -> Option<f64> {
    let ObjectiveSpec::Economic(peaks) = &p.skeleton.objective else {
        return None;
    };
    let (floor_nc, floor_op) = match *peaks {
        PeakObjective::Terminal => (0.0, 0.0),
        PeakObjective::TerminalMax { floor_nc, floor_op } | PeakObjective::FirstStepMax { floor_nc, floor_op } => {
            (floor_nc, floor_op)
        }
    };
    let tie: f64 = p.skeleton.tie_break * inputs.iter().map(|u| u.bess_kw.abs()).sum::<f64>();
    Some(
        p.direct_objective(inputs)
            - tie
            - p.ncdc_rate * (p.a_start * p.x0.peak + floor_nc)
            - p.opdc_rate * (p.b_start * p.x0.onpeak_peak + floor_op),
    )
}

/// Which terminal-cost inequality to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionMode {
    /// Choice 1: terminal input replays the reference input from N steps back.
    Assum6,
    /// Choice 2: terminal input is the system's own.
    Assum7,
    /// Choice 3: as `Assum7`, with the peak comparison N - 1 steps back.
    AssumB1,
}

impl FromStr for AssumptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "assum6" => Ok(AssumptionMode::Assum6),
            "assum7" => Ok(AssumptionMode::Assum7),
            "assum_b1" | "assumb1" => Ok(AssumptionMode::AssumB1),
            _ => Err(Error::Config(format!("unknown assumption mode `{s}`"))),
        }
    }
}

/// A window of a trajectory: `states[k]` is the state at step `start + k`,
/// `inputs[k]` the input applied at that step.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryView<'a> {
    pub start: usize,
    pub states: &'a [AugmentedState],
    pub inputs: &'a [ControlInput],
}

impl TrajectoryView<'_> {
    fn state(&self, t: usize, what: &str) -> Result<AugmentedState> {
        t.checked_sub(self.start)
            .and_then(|k| self.states.get(k))
            .copied()
            .ok_or_else(|| Error::Log(format!("{what} state at step {t} is outside the available window")))
    }

    fn input(&self, t: usize, what: &str) -> Result<ControlInput> {
        t.checked_sub(self.start)
            .and_then(|k| self.inputs.get(k))
            .copied()
            .ok_or_else(|| Error::Log(format!("{what} input at step {t} is outside the available window")))
    }
}

/// Smallest `h(t + 1) - h(t)` that makes the terminal cost satisfy its
/// descent condition at terminal step `t`. `system` holds the state at `t`,
/// the terminal input applied there and the successor state; `reference`
/// holds the realized reference around `t - N`.
pub fn required_h_increment(
    t: usize,
    system: &TrajectoryView,
    reference: &TrajectoryView,
    mode: AssumptionMode,
    site: &Site,
    n: usize,
) -> Result<f64> {
    let tn = t
        .checked_sub(n)
        .ok_or_else(|| Error::Log(format!("step {t} has no history {n} steps back")))?;
    let tariff = &site.tariff;
    let sc = &site.scaling;
    let loss = loss_factor(site.params.eta);
    let dt = tariff.dt_hours;
    let a1 = |s: usize| -> Result<f64> { Ok(sc.a(s) * system.state(s, "system")?.peak) };
    let b1 = |s: usize| -> Result<f64> { Ok(sc.b(s) * system.state(s, "system")?.onpeak_peak) };
    let a2 = |s: usize| -> Result<f64> { Ok(sc.a(s) * reference.state(s, "reference")?.peak) };
    let b2 = |s: usize| -> Result<f64> { Ok(sc.b(s) * reference.state(s, "reference")?.onpeak_peak) };

    let d = reference.input(tn, "reference")?.bess_kw;
    let c = match mode {
        AssumptionMode::Assum6 => d,
        AssumptionMode::Assum7 | AssumptionMode::AssumB1 => system.input(t, "system")?.bess_kw,
    };
    let energy = tariff.energy_rate(t) * dt * (c - site.net(t) + loss * c.abs())
        - tariff.energy_rate(tn) * dt * (d - site.net(tn) + loss * d.abs());

    let (nc_max, op_max) = match mode {
        AssumptionMode::Assum6 | AssumptionMode::Assum7 => (
            a1(t + 1)?.max(a2(tn + 2)?) - a1(t)?.max(a2(tn + 1)?),
            b1(t + 1)?.max(b2(tn + 2)?) - b1(t)?.max(b2(tn + 1)?),
        ),
        AssumptionMode::AssumB1 => (
            a1(tn + 2)?.max(a2(tn + 2)?) - a1(tn + 1)?.max(a2(tn + 1)?),
            b1(tn + 2)?.max(b2(tn + 2)?) - b1(tn + 1)?.max(b2(tn + 1)?),
        ),
    };
    let nc = a1(t + 1)? - a1(t)? + nc_max + a2(tn)? - a2(tn + 2)?;
    let op = b1(t + 1)? - b1(t)? + op_max + b2(tn)? - b2(tn + 2)?;
    Ok(energy + tariff.ncdc_rate * nc + tariff.opdc_rate * op)
}
