//! Scenario configuration file (TOML). Every group and key is optional; a
//! missing key takes the default plant and tariff.

use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::controllers::{ControllerConfig, Method, TerminalCase};
use crate::convex::SolverOptions;
use crate::dynamics::MicrogridParams;
use crate::error::{Error, Result};
use crate::harness::{ensure_lookahead, paired_reference, LookaheadPolicy, ScenarioSpec};
use crate::io::data::{parse_timestamp, LoadedData};
use crate::site::Site;
use crate::tariff::{BillingWindow, EnergyRate, PeakScaling, TariffSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TariffConfig {
    /// Flat $/kWh, used when the data has no `energy_rate` column.
    pub energy_rate: f64,
    pub ncdc_rate: f64,
    pub opdc_rate: f64,
    pub onpeak_start_hour: f64,
    pub onpeak_end_hour: f64,
}

impl Default for TariffConfig {
    fn default() -> Self {
        let t = TariffSchedule::default();
        Self {
            energy_rate: 0.1,
            ncdc_rate: t.ncdc_rate,
            opdc_rate: t.opdc_rate,
            onpeak_start_hour: t.onpeak_start_hour,
            onpeak_end_hour: t.onpeak_end_hour,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BessConfig {
    pub energy_kwh: f64,
    pub power_kw: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub eta: f64,
    pub soc_init: f64,
}

impl Default for BessConfig {
    fn default() -> Self {
        let p = MicrogridParams::default();
        Self {
            energy_kwh: p.bess_energy_kwh,
            power_kw: p.bess_power_kw,
            soc_min: p.soc_min,
            soc_max: p.soc_max,
            eta: p.eta,
            soc_init: p.soc_init,
        }
    }
}

/// Grid exchange limits, kW. `lo_kw` is the export limit (negative).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub lo_kw: f64,
    pub hi_kw: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        let p = MicrogridParams::default();
        Self {
            lo_kw: p.grid_lo,
            hi_kw: p.grid_hi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonConfig {
    pub dt_hours: f64,
    #[serde(alias = "steps_N")]
    pub steps_n: usize,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            dt_hours: 0.25,
            steps_n: 96,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    /// First step of the billing window as a naive local timestamp; the
    /// first data row when absent.
    pub start: Option<String>,
    pub days: u32,
    pub lookahead: LookaheadPolicy,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            start: None,
            days: 31,
            lookahead: LookaheadPolicy::Require,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    /// Defaults to the reference the proposed method is normally paired
    /// with, or std_ref for a reference-only run.
    pub method: Option<Method>,
    pub case: TerminalCase,
    pub track_opdp_floor: bool,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            method: None,
            case: TerminalCase::I,
            track_opdp_floor: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposedConfig {
    pub method: Method,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub max_iter: usize,
    pub tie_break: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            primal_tol: o.lp.primal_tol,
            dual_tol: o.lp.dual_tol,
            max_iter: 0,
            tie_break: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: Option<String>,
    pub tariff: TariffConfig,
    pub bess: BessConfig,
    pub grid: GridConfig,
    pub horizon: HorizonConfig,
    pub window: WindowConfig,
    pub reference: ReferenceConfig,
    pub proposed: Option<ProposedConfig>,
    pub solver: SolverConfig,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.params().validate()?;
        cfg.tariff_schedule(0.0, None).validate()?;
        if cfg.horizon.steps_n == 0 {
            return Err(Error::Config("horizon: steps_n must be at least 1".into()));
        }
        if cfg.window.days == 0 {
            return Err(Error::Config("window: days must be at least 1".into()));
        }
        if let Some(m) = cfg.reference.method.filter(|m| !m.is_reference()) {
            return Err(Error::Config(format!("reference: method must be std_ref or track_ref, got {m}")));
        }
        if let Some(p) = &cfg.proposed {
            if p.method.is_reference() {
                return Err(Error::Config(format!(
                    "proposed: method must be choice1, choice2 or choice3, got {}",
                    p.method
                )));
            }
        }
        if !(cfg.solver.primal_tol > 0.0 && cfg.solver.dual_tol > 0.0) {
            return Err(Error::Config("solver: tolerances must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn params(&self) -> MicrogridParams {
        MicrogridParams {
            bess_energy_kwh: self.bess.energy_kwh,
            bess_power_kw: self.bess.power_kw,
            soc_min: self.bess.soc_min,
            soc_max: self.bess.soc_max,
            eta: self.bess.eta,
            grid_lo: self.grid.lo_kw,
            grid_hi: self.grid.hi_kw,
            soc_init: self.bess.soc_init,
        }
    }

    pub fn tariff_schedule(&self, step0_hour: f64, rates: Option<Vec<f64>>) -> TariffSchedule {
        TariffSchedule {
            energy_rate: rates.map_or(EnergyRate::Flat(self.tariff.energy_rate), EnergyRate::PerStep),
            ncdc_rate: self.tariff.ncdc_rate,
            opdc_rate: self.tariff.opdc_rate,
            onpeak_start_hour: self.tariff.onpeak_start_hour,
            onpeak_end_hour: self.tariff.onpeak_end_hour,
            dt_hours: self.horizon.dt_hours,
            step0_hour,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let mut o = SolverOptions::default();
        o.lp.primal_tol = self.solver.primal_tol;
        o.lp.dual_tol = self.solver.dual_tol;
        o.lp.max_iter = self.solver.max_iter;
        o.qp.feas_tol = self.solver.primal_tol;
        o.qp.max_iter = self.solver.max_iter;
        o
    }

    pub fn controller(&self, method: Method) -> ControllerConfig {
        ControllerConfig {
            method,
            horizon_steps: self.horizon.steps_n,
            case: self.reference.case,
            track_opdp_floor: self.reference.track_opdp_floor,
            tie_break: self.solver.tie_break,
        }
    }

    pub fn reference_method(&self) -> Method {
        self.reference.method.unwrap_or_else(|| match &self.proposed {
            Some(p) => paired_reference(p.method),
            None => Method::StdRef,
        })
    }

    /// Points the configuration at one method: a reference method runs
    /// alone, a proposed one runs against its reference.
    pub fn select_method(&mut self, method: Method) {
        if method.is_reference() {
            self.reference.method = Some(method);
            self.proposed = None;
        } else {
            self.proposed = Some(ProposedConfig { method });
        }
    }

    pub fn window_steps(&self) -> Result<usize> {
        let per_day = 24.0 / self.horizon.dt_hours;
        if (per_day - per_day.round()).abs() > 1e-9 {
            return Err(Error::Config("horizon: dt_hours must divide a day".into()));
        }
        Ok(self.window.days as usize * per_day.round() as usize)
    }

    /// Binds the configuration to data: locates the window, extends the
    /// lookahead if allowed and validates the whole scenario.
    pub fn scenario(&self, data: &LoadedData) -> Result<ScenarioSpec> {
        if (data.dt_hours - self.horizon.dt_hours).abs() > 1e-9 {
            return Err(Error::Input(format!(
                "data is sampled every {} h but the configuration asks for {} h",
                data.dt_hours, self.horizon.dt_hours
            )));
        }
        let start_step = match &self.window.start {
            None => 0,
            Some(s) => data.step_of(parse_timestamp(s).map_err(|m| Error::Config(format!("window.start: {m}")))?)?,
        };
        let length = self.window_steps()?;
        let steps_per_day = (24.0 / self.horizon.dt_hours).round() as usize;
        let needed = start_step + length - 1 + self.horizon.steps_n;
        let series = ensure_lookahead(&data.series, needed, self.window.lookahead, steps_per_day)?;
        let rates = match &data.energy_rate {
            None => None,
            Some(r) => Some(extend_rates(r, needed, self.window.lookahead, steps_per_day)?),
        };
        let tariff = self.tariff_schedule(hour_of(&data.start), rates);
        let site = Site::new(self.params(), tariff, PeakScaling::Unit, series)?;
        let window = BillingWindow::new(start_step, length, &site.tariff)?;
        let proposed = self.proposed.as_ref().map(|p| self.controller(p.method));
        let reference = self.controller(self.reference_method());
        let name = self.name.clone().unwrap_or_else(|| {
            let m = proposed.as_ref().map_or(reference.method, |p| p.method);
            format!("{m}_{}", reference.case.as_str())
        });
        let spec = ScenarioSpec {
            name,
            site,
            window,
            reference,
            proposed,
            solver: self.solver_options(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn hour_of(ts: &NaiveDateTime) -> f64 {
    use chrono::Timelike;
    ts.hour() as f64 + ts.minute() as f64 / 60.0 + ts.second() as f64 / 3600.0
}

fn extend_rates(r: &[f64], needed: usize, policy: LookaheadPolicy, per_day: usize) -> Result<Vec<f64>> {
    if r.len() >= needed {
        return Ok(r.to_vec());
    }
    match policy {
        LookaheadPolicy::Require => Err(Error::Input(format!(
            "energy rates cover {} steps but the window plus lookahead needs {needed}",
            r.len()
        ))),
        LookaheadPolicy::RepeatLastDay => {
            if r.len() < per_day {
                return Err(Error::Input("cannot repeat the last day: rates are shorter than one day".into()));
            }
            let day0 = r.len() - per_day;
            let mut out = r.to_vec();
            let mut k = 0;
            while out.len() < needed {
                out.push(r[day0 + k % per_day]);
                k += 1;
            }
            Ok(out)
        }
    }
}
