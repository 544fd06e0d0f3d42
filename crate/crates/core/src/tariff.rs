//! Tariff structure, exact monthly billing and its additive stage-cost form.
//!
//! The monthly bill is energy charges plus BESS losses plus two demand charges:
//! a non-coincident charge on the largest grid import of the window and an
//! on-peak charge on the largest import during the daily on-peak hours. The
//! stage cost spreads the demand charges over the window through increments of
//! the running-peak states, so summing it over a window started from zero peaks
//! reproduces the bill exactly.
//!
//! All step indices are absolute indices into the data series. Hour-of-day of
//! step `t` is `step0_hour + t * dt_hours (mod 24)`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{AugmentedState, ControlInput, Trajectory};
use crate::error::{Error, Result};

/// Relative tolerance for comparing money totals.
pub const MONEY_REL_TOL: f64 = 1e-8;

/// Energy charge rate in $/kWh, either flat or one value per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnergyRate {
    Flat(f64),
    PerStep(Vec<f64>),
}

impl EnergyRate {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            EnergyRate::Flat(r) => *r,
            EnergyRate::PerStep(v) => v[t],
        }
    }

    /// Number of steps covered, `None` when flat.
    pub fn coverage(&self) -> Option<usize> {
        match self {
            EnergyRate::Flat(_) => None,
            EnergyRate::PerStep(v) => Some(v.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TariffSchedule {
    pub energy_rate: EnergyRate,
    /// $/kW on the non-coincident demand peak.
    pub ncdc_rate: f64,
    /// $/kW on the on-peak demand peak.
    pub opdc_rate: f64,
    pub onpeak_start_hour: f64,
    pub onpeak_end_hour: f64,
    pub dt_hours: f64,
    /// Hour-of-day at which step 0 starts.
    #[serde(default)]
    pub step0_hour: f64,
}

impl Default for TariffSchedule {
    fn default() -> Self {
        Self {
            energy_rate: EnergyRate::Flat(0.1),
            ncdc_rate: 24.48,
            opdc_rate: 19.19,
            onpeak_start_hour: 16.0,
            onpeak_end_hour: 21.0,
            dt_hours: 0.25,
            step0_hour: 0.0,
        }
    }
}

impl TariffSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("tariff: {m}")));
        if !(self.ncdc_rate >= 0.0) {
            return bad("ncdc_rate must be >= 0");
        }
        if !(self.opdc_rate >= 0.0) {
            return bad("opdc_rate must be >= 0");
        }
        if !(self.dt_hours > 0.0) {
            return bad("dt_hours must be > 0");
        }
        let (s, e) = (self.onpeak_start_hour, self.onpeak_end_hour);
        if !(0.0 <= s && s < e && e <= 24.0) {
            return bad("on-peak window must be a nonempty sub-interval of [0, 24)");
        }
        if !(0.0..24.0).contains(&self.step0_hour) {
            return bad("step0_hour must lie in [0, 24)");
        }
        match &self.energy_rate {
            EnergyRate::Flat(r) if !r.is_finite() => bad("energy rate must be finite"),
            EnergyRate::PerStep(v) if v.iter().any(|r| !r.is_finite()) => {
                bad("energy rates must be finite")
            }
            _ => Ok(()),
        }
    }

    pub fn energy_rate(&self, t: usize) -> f64 {
        self.energy_rate.at(t)
    }

    /// Hour-of-day of the start of step `t`, in `[0, 24)`.
    pub fn hour_of_day(&self, t: usize) -> f64 {
        let h = self.step0_hour + t as f64 * self.dt_hours;
        // Snap to the microsecond so that e.g. 5-minute steps land exactly on
        // the hour boundaries.
        let h = (h * 3.6e9).round() / 3.6e9;
        h.rem_euclid(24.0)
    }

    /// Half-open on-peak membership: `[onpeak_start, onpeak_end)`.
    pub fn is_onpeak(&self, t: usize) -> bool {
        let h = self.hour_of_day(t);
        h >= self.onpeak_start_hour && h < self.onpeak_end_hour
    }

    pub fn without_opdc(&self) -> Self {
        Self {
            opdc_rate: 0.0,
            ..self.clone()
        }
    }

    /// Number of on-peak hours per day.
    pub fn onpeak_hours(&self) -> f64 {
        self.onpeak_end_hour - self.onpeak_start_hour
    }
}

/// β(t): 1 when step `t` starts inside the on-peak window, else 0.
pub fn onpeak_indicator(t: usize, tariff: &TariffSchedule) -> u8 {
    u8::from(tariff.is_onpeak(t))
}

/// A billing window of `length` steps starting at absolute step `start_step`.
#[derive(Clone, Debug, PartialEq)]
pub struct BillingWindow {
    pub start_step: usize,
    pub length: usize,
    pub onpeak_mask: Vec<bool>,
}

impl BillingWindow {
    pub fn new(start_step: usize, length: usize, tariff: &TariffSchedule) -> Result<Self> {
        if length == 0 {
            return Err(Error::Input("billing window must contain at least one step".into()));
        }
        let onpeak_mask = (start_step..start_step + length)
            .map(|t| tariff.is_onpeak(t))
            .collect();
        Ok(Self {
            start_step,
            length,
            onpeak_mask,
        })
    }

    /// One past the last step of the window.
    pub fn end_step(&self) -> usize {
        self.start_step + self.length
    }

    pub fn steps(&self) -> std::ops::Range<usize> {
        self.start_step..self.end_step()
    }
}

/// Time-varying weights on the running peaks in the stage cost.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PeakScaling {
    /// a(t) = b(t) = 1 everywhere.
    #[default]
    Unit,
    /// Explicit values indexed by absolute step; must cover every step used.
    Series { a: Vec<f64>, b: Vec<f64> },
}

impl PeakScaling {
    pub fn a(&self, t: usize) -> f64 {
        match self {
            PeakScaling::Unit => 1.0,
            PeakScaling::Series { a, .. } => a[t],
        }
    }

    pub fn b(&self, t: usize) -> f64 {
        match self {
            PeakScaling::Unit => 1.0,
            PeakScaling::Series { b, .. } => b[t],
        }
    }

    /// Checks coverage up to `last_step` and the end-of-window normalization.
    pub fn validate(&self, window: &BillingWindow, last_step: usize) -> Result<()> {
        if let PeakScaling::Series { a, b } = self {
            if a.len() <= last_step || b.len() <= last_step {
                return Err(Error::Config(format!(
                    "peak scaling must cover steps 0..={last_step} (a has {}, b has {})",
                    a.len(),
                    b.len()
                )));
            }
            if a.iter().chain(b).any(|v| !v.is_finite()) {
                return Err(Error::Config("peak scaling values must be finite".into()));
            }
        }
        let end = window.end_step();
        if self.a(end) != 1.0 || self.b(end) != 1.0 {
            return Err(Error::Config(format!(
                "peak scaling must satisfy a(T) = b(T) = 1 at the window end (step {end})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub energy_cost: f64,
    pub bess_loss_cost: f64,
    pub ncdc: f64,
    pub opdc: f64,
    pub total: f64,
}

impl CostBreakdown {
    fn from_parts(energy_cost: f64, bess_loss_cost: f64, ncdc: f64, opdc: f64) -> Self {
        Self {
            energy_cost,
            bess_loss_cost,
            ncdc,
            opdc,
            total: energy_cost + bess_loss_cost + ncdc + opdc,
        }
    }
}

/// Fraction of |u1| charged as BESS loss: (1 - η) / 2.
pub fn loss_factor(eta: f64) -> f64 {
    (1.0 - eta) / 2.0
}

/// Exact monthly bill for battery dispatch `u1` and grid import `u2` over
/// `window`.
pub fn monthly_cost(
    u1: &[f64],
    u2: &[f64],
    window: &BillingWindow,
    tariff: &TariffSchedule,
    eta: f64,
) -> Result<CostBreakdown> {
    if u1.len() != window.length || u2.len() != window.length {
        return Err(Error::Input(format!(
            "series length mismatch: u1 has {}, u2 has {}, window has {}",
            u1.len(),
            u2.len(),
            window.length
        )));
    }
    let loss = loss_factor(eta);
    let mut energy = 0.0;
    let mut losses = 0.0;
    let mut peak = f64::NEG_INFINITY;
    let mut onpeak_peak = f64::NEG_INFINITY;
    for (k, t) in window.steps().enumerate() {
        let w = tariff.energy_rate(t) * tariff.dt_hours;
        energy += w * u2[k];
        losses += w * loss * u1[k].abs();
        peak = peak.max(u2[k]);
        if window.onpeak_mask[k] {
            onpeak_peak = onpeak_peak.max(u2[k]);
        }
    }
    let ncdc = tariff.ncdc_rate * peak.max(0.0);
    let opdc = tariff.opdc_rate * onpeak_peak.max(0.0);
    Ok(CostBreakdown::from_parts(energy, losses, ncdc, opdc))
}

/// Additive stage cost l(x, u, t) with the demand charges expressed as
/// increments of the scaled running peaks. `x_next` must be the successor of
/// `x` under `u` at `t`.
pub fn stage_cost(
    x: &AugmentedState,
    x_next: &AugmentedState,
    u: &ControlInput,
    t: usize,
    tariff: &TariffSchedule,
    scaling: &PeakScaling,
    eta: f64,
) -> f64 {
    let energy = tariff.energy_rate(t)
        * tariff.dt_hours
        * (u.grid_kw + loss_factor(eta) * u.bess_kw.abs());
    let ncdc = tariff.ncdc_rate * (scaling.a(t + 1) * x_next.peak - scaling.a(t) * x.peak);
    let opdc = tariff.opdc_rate
        * (scaling.b(t + 1) * x_next.onpeak_peak - scaling.b(t) * x.onpeak_peak);
    energy + ncdc + opdc
}

/// |Σ stage costs − monthly bill| for a full-window trajectory.
///
/// The trajectory must start with zero peaks at the window start, and its peak
/// states must follow the running-max recursion exactly.
pub fn decompose_check(
    trajectory: &Trajectory,
    window: &BillingWindow,
    tariff: &TariffSchedule,
    scaling: &PeakScaling,
    eta: f64,
) -> Result<f64> {
    let n = window.length;
    if trajectory.inputs.len() != n || trajectory.states.len() != n + 1 {
        return Err(Error::Validation(format!(
            "expected {n} inputs and {} states, got {} and {}",
            n + 1,
            trajectory.inputs.len(),
            trajectory.states.len()
        )));
    }
    let x0 = &trajectory.states[0];
    if x0.peak != 0.0 || x0.onpeak_peak != 0.0 {
        return Err(Error::Validation("running peaks must start at 0".into()));
    }
    let end = window.end_step();
    if scaling.a(end) != 1.0 || scaling.b(end) != 1.0 {
        return Err(Error::Validation("scaling must equal 1 at the window end".into()));
    }
    let mut sum = 0.0;
    for (k, t) in window.steps().enumerate() {
        let (x, x_next, u) = (
            &trajectory.states[k],
            &trajectory.states[k + 1],
            &trajectory.inputs[k],
        );
        let beta = if window.onpeak_mask[k] { u.grid_kw } else { 0.0 };
        if x_next.peak != x.peak.max(u.grid_kw) || x_next.onpeak_peak != x.onpeak_peak.max(beta) {
            return Err(Error::Validation(format!(
                "running peaks at step {t} do not follow the max recursion"
            )));
        }
        sum += stage_cost(x, x_next, u, t, tariff, scaling, eta);
    }
    let u1: Vec<f64> = trajectory.inputs.iter().map(|u| u.bess_kw).collect();
    let u2: Vec<f64> = trajectory.inputs.iter().map(|u| u.grid_kw).collect();
    let bill = monthly_cost(&u1, &u2, window, tariff, eta)?;
    Ok((sum - bill.total).abs())
}
