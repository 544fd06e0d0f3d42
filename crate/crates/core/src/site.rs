//! Everything about the plant and its tariff that stays fixed over a run.

use crate::dynamics::{ExogenousSeries, MicrogridParams};
use crate::error::{Error, Result};
use crate::tariff::{PeakScaling, TariffSchedule};

#[derive(Clone, Debug, PartialEq)]
pub struct Site {
    pub params: MicrogridParams,
    pub tariff: TariffSchedule,
    pub scaling: PeakScaling,
    pub series: ExogenousSeries,
}

impl Site {
    pub fn new(params: MicrogridParams, tariff: TariffSchedule, scaling: PeakScaling, series: ExogenousSeries) -> Result<Self> {
        let s = Self {
            params,
            tariff,
            scaling,
            series,
        };
        s.params.validate()?;
        s.tariff.validate()?;
        s.series.validate()?;
        Ok(s)
    }

    pub fn net(&self, t: usize) -> f64 {
        self.series.net(t)
    }

    /// Checks that data, energy rates and peak scaling reach step `end`
    /// (exclusive for data, inclusive for scaling).
    pub fn check_coverage(&self, end: usize) -> Result<()> {
        if self.series.len() < end {
            return Err(Error::Input(format!(
                "data covers {} steps but {end} are needed",
                self.series.len()
            )));
        }
        if let Some(len) = self.tariff.energy_rate.coverage() {
            if len < end {
                return Err(Error::Input(format!("energy rates cover {len} steps but {end} are needed")));
            }
        }
        if let crate::tariff::PeakScaling::Series { a, b } = &self.scaling {
            if a.len() <= end || b.len() <= end {
                return Err(Error::Input(format!("peak scaling must cover step {end}")));
            }
        }
        Ok(())
    }
}
