//! PV and load time series in CSV form.
//!
//! Header `timestamp,pv_kw,load_kw`, optionally followed by `energy_rate`
//! ($/kWh per step). Timestamps are naive local wall-clock times without
//! any daylight-saving shifts; the on-peak window is read off them directly.

use std::io::Read;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use serde::Deserialize;

use crate::dynamics::ExogenousSeries;
use crate::error::{Error, Result};

const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
const WRITE_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn parse_timestamp(s: &str) -> std::result::Result<NaiveDateTime, String> {
    let s = s.trim();
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .ok_or_else(|| format!("`{s}` is not a naive ISO-8601 timestamp (e.g. 2024-01-01T00:15:00)"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedData {
    pub start: NaiveDateTime,
    pub dt_hours: f64,
    pub series: ExogenousSeries,
    pub energy_rate: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct Row {
    timestamp: String,
    pv_kw: f64,
    load_kw: f64,
    #[serde(default)]
    energy_rate: Option<f64>,
}

impl LoadedData {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    fn step_seconds(&self) -> i64 {
        (self.dt_hours * 3600.0).round() as i64
    }

    pub fn timestamp(&self, step: usize) -> NaiveDateTime {
        self.start + Duration::seconds(self.step_seconds() * step as i64)
    }

    /// Index of the row stamped `ts`.
    pub fn step_of(&self, ts: NaiveDateTime) -> Result<usize> {
        let secs = (ts - self.start).num_seconds();
        let dt = self.step_seconds();
        if secs < 0 || secs % dt != 0 || (secs / dt) as usize >= self.len() {
            return Err(Error::Input(format!("{ts} is not a timestamp in the data")));
        }
        Ok((secs / dt) as usize)
    }
}

pub fn load_data(path: &Path) -> Result<LoadedData> {
    let file = std::fs::File::open(path)?;
    read_data(file, &path.display().to_string())
}

/// Parses and validates a data CSV; `label` names the source in errors.
pub fn read_data<R: Read>(reader: R, label: &str) -> Result<LoadedData> {
    let err = |row: usize, message: String| Error::Data {
        path: label.to_string(),
        row,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for want in ["timestamp", "pv_kw", "load_kw"] {
        if !headers.iter().any(|h| h == want) {
            return Err(err(1, format!("missing column `{want}`")));
        }
    }
    let has_rate = headers.iter().any(|h| h == "energy_rate");
    let (mut stamps, mut pv, mut load, mut rate) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        // header is line 1
        let line = i + 2;
        let r = rec.map_err(|e| err(line, e.to_string()))?;
        let ts = parse_timestamp(&r.timestamp).map_err(|m| err(line, m))?;
        if !(r.pv_kw.is_finite() && r.pv_kw >= 0.0) {
            return Err(err(line, format!("pv_kw must be finite and >= 0, got {}", r.pv_kw)));
        }
        if !(r.load_kw.is_finite() && r.load_kw >= 0.0) {
            return Err(err(line, format!("load_kw must be finite and >= 0, got {}", r.load_kw)));
        }
        if has_rate {
            match r.energy_rate {
                Some(v) if v.is_finite() => rate.push(v),
                _ => return Err(err(line, "energy_rate is missing or not finite".into())),
            }
        }
        stamps.push(ts);
        pv.push(r.pv_kw);
        load.push(r.load_kw);
    }
    if stamps.len() < 2 {
        return Err(err(1, "need at least two rows to fix the sampling interval".into()));
    }
    let dt = stamps[1] - stamps[0];
    if dt <= Duration::zero() {
        return Err(err(3, "timestamps must be strictly increasing".into()));
    }
    for (i, w) in stamps.windows(2).enumerate() {
        let d = w[1] - w[0];
        if d <= Duration::zero() {
            return Err(err(i + 3, format!("timestamp {} does not follow {}", w[1], w[0])));
        }
        if d != dt {
            return Err(err(i + 3, format!("gap of {d} where the sampling interval is {dt}")));
        }
    }
    let series = ExogenousSeries::new(pv, load).map_err(|e| err(1, e.to_string()))?;
    Ok(LoadedData {
        start: stamps[0],
        dt_hours: dt.num_seconds() as f64 / 3600.0,
        series,
        energy_rate: has_rate.then_some(rate),
    })
}

pub fn write_data(path: &Path, data: &LoadedData) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp", "pv_kw", "load_kw"];
    if data.energy_rate.is_some() {
        header.push("energy_rate");
    }
    w.write_record(&header)?;
    for k in 0..data.len() {
        let mut rec = vec![
            data.timestamp(k).format(WRITE_FORMAT).to_string(),
            data.series.pv_kw[k].to_string(),
            data.series.load_kw[k].to_string(),
        ];
        if let Some(r) = &data.energy_rate {
            rec.push(r[k].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<LoadedData> {
        read_data(text.as_bytes(), "mem")
    }

    #[test]
    fn accepts_uniform_quarter_hours() {
        let d = read("timestamp,pv_kw,load_kw\n2024-01-01T00:00:00,0,300\n2024-01-01 00:15,1.5,310\n2024-01-01T00:30:00,2,320\n").unwrap();
        assert_eq!(d.dt_hours, 0.25);
        assert_eq!(d.series.net(1), 1.5 - 310.0);
        assert_eq!(d.energy_rate, None);
        assert_eq!(d.step_of(parse_timestamp("2024-01-01T00:30:00").unwrap()).unwrap(), 2);
        assert!(d.step_of(parse_timestamp("2024-01-01T00:20:00").unwrap()).is_err());
    }

    #[test]
    fn reads_rate_column() {
        let d = read("timestamp,pv_kw,load_kw,energy_rate\n2024-01-01T00:00:00,0,1,0.1\n2024-01-01T01:00:00,0,1,0.2\n").unwrap();
        assert_eq!(d.energy_rate, Some(vec![0.1, 0.2]));
        assert_eq!(d.dt_hours, 1.0);
    }

    fn data_error_row(r: Result<LoadedData>) -> usize {
        match r {
            Err(Error::Data { row, .. }) => row,
            other => panic!("expected a data error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_rows() {
        let h = "timestamp,pv_kw,load_kw\n";
        let dup = format!("{h}2024-01-01T00:00:00,0,1\n2024-01-01T00:15:00,0,1\n2024-01-01T00:15:00,0,1\n");
        assert_eq!(data_error_row(read(&dup)), 4);
        let gap = format!("{h}2024-01-01T00:00:00,0,1\n2024-01-01T00:15:00,0,1\n2024-01-01T00:45:00,0,1\n");
        assert_eq!(data_error_row(read(&gap)), 4);
        let neg = format!("{h}2024-01-01T00:00:00,0,1\n2024-01-01T00:15:00,-1,1\n");
        assert_eq!(data_error_row(read(&neg)), 3);
        let bad_ts = format!("{h}2024-01-01T00:00:00+02:00,0,1\n2024-01-01T00:15:00,0,1\n");
        assert_eq!(data_error_row(read(&bad_ts)), 2);
        let nan = format!("{h}2024-01-01T00:00:00,0,NaN\n2024-01-01T00:15:00,0,1\n");
        assert_eq!(data_error_row(read(&nan)), 2);
        let text = format!("{h}2024-01-01T00:00:00,0,abc\n");
        assert_eq!(data_error_row(read(&text)), 2);
        assert_eq!(data_error_row(read("timestamp,pv_kw\n2024-01-01T00:00:00,0\n")), 1);
        assert_eq!(data_error_row(read(&format!("{h}2024-01-01T00:00:00,0,1\n"))), 1);
    }
}
