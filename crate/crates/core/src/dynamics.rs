//! Battery/grid model and the augmented running-peak dynamics.
//!
//! Sign conventions: `bess_kw > 0` charges the battery, `grid_kw > 0` imports
//! from the grid, and the net injection `c = pv - load` couples them through
//! `bess_kw - grid_kw = c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tariff::TariffSchedule;

/// Absolute tolerance on power bounds and power balance, kW.
pub const POWER_TOL: f64 = 1e-6;
/// Absolute tolerance on SOC bounds, fraction of capacity.
pub const SOC_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicrogridParams {
    pub bess_energy_kwh: f64,
    pub bess_power_kw: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub eta: f64,
    /// Lower grid-exchange bound â (export limit), kW, negative.
    pub grid_lo: f64,
    /// Upper grid-exchange bound b̂ (import limit), kW, positive.
    pub grid_hi: f64,
    pub soc_init: f64,
}

impl Default for MicrogridParams {
    fn default() -> Self {
        Self {
            bess_energy_kwh: 2500.0,
            bess_power_kw: 700.0,
            soc_min: 0.2,
            soc_max: 0.8,
            eta: 0.8,
            grid_lo: -10_000.0,
            grid_hi: 10_000.0,
            soc_init: 0.5,
        }
    }
}

impl MicrogridParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("bess/grid: {m}")));
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            return bad("need 0 <= soc_min < soc_max <= 1");
        }
        if !(self.bess_power_kw >= 0.0 && self.bess_power_kw.is_finite()) {
            return bad("power_kw must be finite and >= 0");
        }
        if !(self.bess_energy_kwh > 0.0 && self.bess_energy_kwh.is_finite()) {
            return bad("energy_kwh must be finite and > 0");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta must lie in (0, 1]");
        }
        if !(self.grid_lo < 0.0 && 0.0 < self.grid_hi) || !self.grid_lo.is_finite() || !self.grid_hi.is_finite() {
            return bad("need finite grid_lo < 0 < grid_hi");
        }
        if !(self.soc_min <= self.soc_init && self.soc_init <= self.soc_max) {
            return bad("soc_init must lie within [soc_min, soc_max]");
        }
        Ok(())
    }

    /// Steps needed to sweep the whole SOC range at full power.
    pub fn traversal_steps(&self, dt_hours: f64) -> f64 {
        (self.soc_max - self.soc_min) * self.bess_energy_kwh / (self.bess_power_kw * dt_hours)
    }

    /// kWh of SOC change per kW held for one step.
    pub fn soc_gain(&self, dt_hours: f64) -> f64 {
        dt_hours / self.bess_energy_kwh
    }
}

/// PV and load forecasts, one value per step, indexed by absolute step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExogenousSeries {
    pub pv_kw: Vec<f64>,
    pub load_kw: Vec<f64>,
}

impl ExogenousSeries {
    pub fn new(pv_kw: Vec<f64>, load_kw: Vec<f64>) -> Result<Self> {
        let s = Self { pv_kw, load_kw };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pv_kw.len() != self.load_kw.len() {
            return Err(Error::Input(format!(
                "pv has {} steps but load has {}",
                self.pv_kw.len(),
                self.load_kw.len()
            )));
        }
        if let Some(k) = self.pv_kw.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Input(format!("pv_kw at step {k} must be finite and >= 0")));
        }
        if let Some(k) = self.load_kw.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("load_kw at step {k} must be finite")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pv_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pv_kw.is_empty()
    }

    /// Net injection c(t) = PV(t) − L(t).
    pub fn net(&self, t: usize) -> f64 {
        self.pv_kw[t] - self.load_kw[t]
    }

    /// A copy covering `steps` repeated `times` times back to back.
    pub fn tiled(&self, steps: usize, times: usize) -> Self {
        let rep = |v: &[f64]| -> Vec<f64> { v[..steps].iter().copied().cycle().take(steps * times).collect() };
        Self {
            pv_kw: rep(&self.pv_kw),
            load_kw: rep(&self.load_kw),
        }
    }
}

/// (x1, x2, x3): SOC fraction, running non-coincident peak, running on-peak
/// peak (kW).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub soc: f64,
    pub peak: f64,
    pub onpeak_peak: f64,
}

impl AugmentedState {
    pub fn new(soc: f64, peak: f64, onpeak_peak: f64) -> Self {
        Self {
            soc,
            peak,
            onpeak_peak,
        }
    }

    /// Window-start state: given SOC, zero peaks.
    pub fn initial(soc: f64) -> Self {
        Self::new(soc, 0.0, 0.0)
    }
}

/// (u1, u2): battery dispatch and grid import, kW.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub bess_kw: f64,
    pub grid_kw: f64,
}

impl ControlInput {
    pub fn new(bess_kw: f64, grid_kw: f64) -> Self {
        Self { bess_kw, grid_kw }
    }

    /// The input with battery dispatch `u1` that balances net injection `c`.
    pub fn balanced(u1: f64, c: f64) -> Self {
        Self::new(u1, u1 - c)
    }
}

/// A state sequence of length `inputs.len() + 1`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<AugmentedState>,
    pub inputs: Vec<ControlInput>,
}

fn check_bound(step: usize, bound: &'static str, value: f64, lo: f64, hi: f64, tol: f64) -> Result<()> {
    if value < lo - tol || value > hi + tol || !value.is_finite() {
        return Err(Error::Dynamics {
            step,
            bound,
            value,
            lo,
            hi,
        });
    }
    Ok(())
}

/// Checks the input bounds and power balance of `u` at step `t`.
pub fn check_input(u: &ControlInput, t: usize, params: &MicrogridParams, series: &ExogenousSeries) -> Result<()> {
    let p = params.bess_power_kw;
    check_bound(t, "battery power", u.bess_kw, -p, p, POWER_TOL)?;
    check_bound(t, "grid exchange", u.grid_kw, params.grid_lo, params.grid_hi, POWER_TOL)?;
    let c = series.net(t);
    check_bound(t, "power balance", u.bess_kw - u.grid_kw, c, c, POWER_TOL)
}

/// One step of the augmented dynamics.
pub fn advance_augmented(
    x: &AugmentedState,
    u: &ControlInput,
    t: usize,
    params: &MicrogridParams,
    tariff: &TariffSchedule,
    series: &ExogenousSeries,
) -> Result<AugmentedState> {
    check_input(u, t, params, series)?;
    let next = step_unchecked(x, u, t, params, tariff);
    check_bound(t + 1, "state of charge", next.soc, params.soc_min, params.soc_max, SOC_TOL)?;
    Ok(next)
}

/// The dynamics without any bound checks.
pub fn step_unchecked(
    x: &AugmentedState,
    u: &ControlInput,
    t: usize,
    params: &MicrogridParams,
    tariff: &TariffSchedule,
) -> AugmentedState {
    let beta_u2 = if tariff.is_onpeak(t) { u.grid_kw } else { 0.0 };
    AugmentedState {
        soc: x.soc + u.bess_kw * params.soc_gain(tariff.dt_hours),
        peak: x.peak.max(u.grid_kw),
        onpeak_peak: x.onpeak_peak.max(beta_u2),
    }
}

/// Rolls `inputs` forward from `x0` starting at step `t0`, checking every
/// bound.
pub fn simulate(
    x0: AugmentedState,
    inputs: &[ControlInput],
    t0: usize,
    params: &MicrogridParams,
    tariff: &TariffSchedule,
    series: &ExogenousSeries,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0);
    let mut x = x0;
    for (k, u) in inputs.iter().enumerate() {
        x = advance_augmented(&x, u, t0 + k, params, tariff, series)?;
        states.push(x);
    }
    Ok(Trajectory {
        states,
        inputs: inputs.to_vec(),
    })
}

/// Interval of battery dispatch `u1` meeting the power, grid-exchange and
/// one-step SOC bounds at step `t`.
pub fn feasible_input_set(
    x: &AugmentedState,
    t: usize,
    params: &MicrogridParams,
    tariff: &TariffSchedule,
    series: &ExogenousSeries,
) -> Result<(f64, f64)> {
    let c = series.net(t);
    let gain = params.soc_gain(tariff.dt_hours);
    let p = params.bess_power_kw;
    let lo = (-p).max(params.grid_lo + c).max((params.soc_min - x.soc) / gain);
    let hi = p.min(params.grid_hi + c).min((params.soc_max - x.soc) / gain);
    if lo > hi + POWER_TOL {
        return Err(Error::EmptyInputSet { step: t, lo, hi });
    }
    Ok((lo.min(hi), hi))
}

/// Which terminal control law to apply.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TerminalLaw {
    /// Replay the reference dispatch from one horizon earlier, u^r_1(t − N).
    Choice1 { ref_u1: f64 },
    /// Any admissible dispatch; the usual pick is `u1 = 0`.
    Relaxed { u1: f64 },
}

impl TerminalLaw {
    pub fn relaxed_default() -> Self {
        TerminalLaw::Relaxed { u1: 0.0 }
    }
}

/// Terminal control input `(u1, u1 − c(t))` for the chosen law.
pub fn terminal_control_law(
    t: usize,
    law: TerminalLaw,
    params: &MicrogridParams,
    series: &ExogenousSeries,
) -> Result<ControlInput> {
    let u1 = match law {
        TerminalLaw::Choice1 { ref_u1 } => ref_u1,
        TerminalLaw::Relaxed { u1 } => u1,
    };
    let u = ControlInput::balanced(u1, series.net(t));
    let p = params.bess_power_kw;
    check_bound(t, "battery power", u.bess_kw, -p, p, POWER_TOL)?;
    check_bound(t, "grid exchange", u.grid_kw, params.grid_lo, params.grid_hi, POWER_TOL)?;
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_series(c: f64, n: usize) -> ExogenousSeries {
        // c = pv - load with load chosen to keep pv >= 0
        let pv = c.max(0.0);
        ExogenousSeries::new(vec![pv; n], vec![pv - c; n]).unwrap()
    }

    #[test]
    fn advance_example() {
        let p = MicrogridParams::default();
        let tariff = TariffSchedule::default();
        let s = flat_series(400.0, 10);
        let x = advance_augmented(&AugmentedState::initial(0.5), &ControlInput::new(700.0, 300.0), 0, &p, &tariff, &s)
            .unwrap();
        assert!((x.soc - 0.57).abs() < 1e-15);
        assert_eq!(x.peak, 300.0);
        assert_eq!(x.onpeak_peak, 0.0);
    }

    #[test]
    fn advance_keeps_prior_peak_and_tracks_onpeak() {
        let p = MicrogridParams::default();
        let tariff = TariffSchedule::default();
        let s = flat_series(-300.0, 100);
        let x = AugmentedState::new(0.5, 500.0, 100.0);
        let u = ControlInput::new(0.0, 300.0);
        assert_eq!(advance_augmented(&x, &u, 0, &p, &tariff, &s).unwrap().peak, 500.0);
        let s = flat_series(-250.0, 100);
        let u = ControlInput::new(0.0, 250.0);
        // step 68 is 17:00
        assert_eq!(advance_augmented(&x, &u, 68, &p, &tariff, &s).unwrap().onpeak_peak, 250.0);
        assert_eq!(advance_augmented(&x, &u, 40, &p, &tariff, &s).unwrap().onpeak_peak, 100.0);
    }

    #[test]
    fn advance_reports_violations() {
        let p = MicrogridParams::default();
        let tariff = TariffSchedule::default();
        let s = flat_series(0.0, 4);
        let x = AugmentedState::initial(0.5);
        let err = advance_augmented(&x, &ControlInput::new(800.0, 800.0), 0, &p, &tariff, &s).unwrap_err();
        assert!(matches!(err, Error::Dynamics { bound: "battery power", .. }));
        let err = advance_augmented(&x, &ControlInput::new(100.0, 50.0), 0, &p, &tariff, &s).unwrap_err();
        assert!(matches!(err, Error::Dynamics { bound: "power balance", .. }));
        let x = AugmentedState::initial(0.79);
        let err = advance_augmented(&x, &ControlInput::new(700.0, 700.0), 0, &p, &tariff, &s).unwrap_err();
        assert!(matches!(err, Error::Dynamics { bound: "state of charge", .. }));
    }

    #[test]
    fn feasible_set_examples() {
        let p = MicrogridParams::default();
        let tariff = TariffSchedule::default();
        let s = flat_series(5.0, 4);
        let (lo, hi) = feasible_input_set(&AugmentedState::initial(0.5), 0, &p, &tariff, &s).unwrap();
        assert_eq!((lo, hi), (-700.0, 700.0));

        let (_, hi) = feasible_input_set(&AugmentedState::initial(0.8), 0, &p, &tariff, &s).unwrap();
        assert!(hi <= 0.0);

        let p0 = MicrogridParams {
            bess_power_kw: 0.0,
            ..p
        };
        let (lo, hi) = feasible_input_set(&AugmentedState::initial(0.5), 0, &p0, &tariff, &s).unwrap();
        assert_eq!((lo, hi), (0.0, 0.0));
    }

    #[test]
    fn feasible_set_empty_when_grid_cannot_absorb() {
        let p = MicrogridParams {
            grid_lo: -100.0,
            grid_hi: 100.0,
            ..Default::default()
        };
        let tariff = TariffSchedule::default();
        // 1000 kW surplus, battery takes 700 at most, grid 100 at most
        let s = flat_series(1000.0, 2);
        assert!(matches!(
            feasible_input_set(&AugmentedState::initial(0.5), 0, &p, &tariff, &s),
            Err(Error::EmptyInputSet { .. })
        ));
    }

    #[test]
    fn terminal_law_examples() {
        let p = MicrogridParams::default();
        let s = flat_series(-50.0, 2);
        let u = terminal_control_law(0, TerminalLaw::Choice1 { ref_u1: 150.0 }, &p, &s).unwrap();
        assert_eq!(u, ControlInput::new(150.0, 200.0));
        let s = flat_series(-120.0, 2);
        let u = terminal_control_law(0, TerminalLaw::relaxed_default(), &p, &s).unwrap();
        assert_eq!(u, ControlInput::new(0.0, 120.0));
        let s = flat_series(0.0, 2);
        let u = terminal_control_law(0, TerminalLaw::relaxed_default(), &p, &s).unwrap();
        assert_eq!(u, ControlInput::new(0.0, 0.0));
        let small = MicrogridParams {
            grid_hi: 100.0,
            ..p
        };
        let s = flat_series(-120.0, 2);
        assert!(terminal_control_law(0, TerminalLaw::relaxed_default(), &small, &s).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(MicrogridParams::default().validate().is_ok());
        let bad = MicrogridParams {
            soc_min: 0.9,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MicrogridParams {
            eta: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MicrogridParams {
            grid_lo: 5.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!((MicrogridParams::default().traversal_steps(0.25) - 1500.0 / 175.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn running_peaks_match_brute_force(
            u1 in proptest::collection::vec(-700.0f64..700.0, 96),
            c in proptest::collection::vec(-600.0f64..600.0, 96),
        ) {
            let p = MicrogridParams { soc_min: 0.0, soc_max: 1.0, bess_energy_kwh: 1e6, ..Default::default() };
            let tariff = TariffSchedule::default();
            let pv: Vec<f64> = c.iter().map(|v| v.max(0.0)).collect();
            let load: Vec<f64> = c.iter().zip(&pv).map(|(c, pv)| pv - c).collect();
            let s = ExogenousSeries::new(pv, load).unwrap();
            let inputs: Vec<ControlInput> = (0..96).map(|k| ControlInput::balanced(u1[k], s.net(k))).collect();
            let traj = simulate(AugmentedState::initial(0.5), &inputs, 0, &p, &tariff, &s).unwrap();
            let last = traj.states[96];
            let mut peak = 0.0f64;
            let mut op = 0.0f64;
            for (k, u) in inputs.iter().enumerate() {
                peak = peak.max(u.grid_kw);
                if tariff.is_onpeak(k) { op = op.max(u.grid_kw); }
            }
            prop_assert_eq!(last.peak, peak);
            prop_assert_eq!(last.onpeak_peak, op);
            for (k, u) in inputs.iter().enumerate() {
                prop_assert!((u.bess_kw - u.grid_kw - s.net(k)).abs() < 1e-9);
            }
        }

        #[test]
        fn soc_round_trip(u1 in -700.0f64..700.0, soc in 0.3f64..0.7) {
            let p = MicrogridParams::default();
            let tariff = TariffSchedule::default();
            let s = flat_series(0.0, 4);
            let x = AugmentedState::initial(soc);
            let a = advance_augmented(&x, &ControlInput::balanced(u1, 0.0), 0, &p, &tariff, &s).unwrap();
            let b = advance_augmented(&a, &ControlInput::balanced(-u1, 0.0), 1, &p, &tariff, &s).unwrap();
            prop_assert!((b.soc - soc).abs() <= 1e-15);
        }

        #[test]
        fn feasible_set_inputs_are_admissible(soc in 0.2f64..=0.8, c in -2000.0f64..2000.0, frac in 0.0f64..=1.0) {
            let p = MicrogridParams::default();
            let tariff = TariffSchedule::default();
            let s = flat_series(c, 2);
            let x = AugmentedState::initial(soc);
            let (lo, hi) = feasible_input_set(&x, 0, &p, &tariff, &s).unwrap();
            let u = ControlInput::balanced(lo + frac * (hi - lo), c);
            prop_assert!(advance_augmented(&x, &u, 0, &p, &tariff, &s).is_ok());
        }

        #[test]
        fn relaxed_law_is_sequentially_invariant(soc in 0.2f64..=0.8, peak in 0.0f64..1000.0, c in -2000.0f64..2000.0) {
            let p = MicrogridParams::default();
            let tariff = TariffSchedule::default();
            let s = flat_series(c, 2);
            let x = AugmentedState::new(soc, peak, peak / 2.0);
            let u = terminal_control_law(0, TerminalLaw::relaxed_default(), &p, &s).unwrap();
            let next = advance_augmented(&x, &u, 0, &p, &tariff, &s).unwrap();
            prop_assert!(next.soc >= p.soc_min && next.soc <= p.soc_max);
            prop_assert!(next.peak >= 0.0 && next.peak <= p.grid_hi);
            prop_assert!(next.onpeak_peak >= 0.0 && next.onpeak_peak <= next.peak);
        }
    }
}
