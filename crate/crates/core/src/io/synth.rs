//! Deterministic synthetic PV and load profiles. Every day is identical:
//! a sinusoidal base load with an evening bump inside the on-peak hours, and
//! a cubed-sine PV bell centred on noon.

use std::f64::consts::PI;

use chrono::{NaiveDateTime, Timelike};

use crate::dynamics::ExogenousSeries;
use crate::io::data::LoadedData;

pub fn synth_load_kw(hour: f64) -> f64 {
    150.0 + 60.0 * (2.0 * PI * (hour - 9.0) / 24.0).sin() + 200.0 * (-((hour - 18.5) / 1.5).powi(2)).exp()
}

pub fn synth_pv_kw(hour: f64) -> f64 {
    400.0 * (PI * (hour - 6.0) / 12.0).sin().max(0.0).powi(3)
}

/// `days` whole days from `start` plus `extra_steps` of lookahead.
pub fn synth_month(days: u32, dt_hours: f64, start: NaiveDateTime, extra_steps: usize) -> LoadedData {
    let per_day = (24.0 / dt_hours).round() as usize;
    let len = days as usize * per_day + extra_steps;
    let h0 = start.hour() as f64 + start.minute() as f64 / 60.0 + start.second() as f64 / 3600.0;
    let hours: Vec<f64> = (0..len)
        .map(|k| {
            // same snapping as the tariff clock
            let h = h0 + k as f64 * dt_hours;
            ((h * 3.6e9).round() / 3.6e9).rem_euclid(24.0)
        })
        .collect();
    let pv = hours.iter().map(|&h| synth_pv_kw(h)).collect();
    let load = hours.iter().map(|&h| synth_load_kw(h)).collect();
    LoadedData {
        start,
        dt_hours,
        series: ExogenousSeries::new(pv, load).expect("synthetic profiles are valid"),
        energy_rate: None,
    }
}
